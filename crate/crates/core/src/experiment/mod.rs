//! Config-driven pipeline: data, training, attribution, simulation, rendering.

mod config;
mod pipeline;
mod render;

pub use config::{DatasetConfig, ExperimentConfig, ModelSpec, Variant};
pub use pipeline::{
    attribute_stage, generate_stage, read_artifact, run_experiment, simulate_stage, train_stage, write_artifact,
    ArtifactHeader, Paths, REPORT_FILE,
};
pub use render::{render_from_files, render_heatmap, token_labels, NEUTRAL};

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::counterfactuals::CounterfactualError;
use crate::model::ModelError;
use crate::simulation::SimulationError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at {}: {field}: {message}", line.map_or("?".to_owned(), |l| format!("line {l}")))]
    Config {
        line: Option<usize>,
        field: String,
        message: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Missing(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

impl ExperimentError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config { .. } => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
