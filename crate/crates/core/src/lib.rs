pub mod attribution;
pub mod counterfactuals;
pub mod experiment;
pub mod grad;
pub mod model;
pub mod simulation;
