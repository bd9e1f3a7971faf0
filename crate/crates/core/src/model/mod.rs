//! Micro-transformer encoder with yes/no and span QA heads.
//!
//! Besides ordinary prediction, the encoder supports replacing the
//! post-softmax attention of any subset of layers with a supplied tensor and
//! feeding token embeddings directly, which is what the gradient-based
//! attribution methods differentiate through.

mod checkpoint;
mod instance;
mod train;
mod transformer;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use instance::{Answer, ComparisonFacts, ComparisonTemplate, Head, Insertion, Instance, Metadata, Task};
pub use train::{accuracy, train, EpochStats, TrainConfig, TrainingMetrics};
pub use transformer::{
    AnswerDistribution, AttentionStack, LayerWeights, MicroTransformer, ModelConfig, Objective, Outcome,
    Prediction, QaLogits, Request, Target, Weights, MAX_ANSWER_LEN,
};
pub use vocab::{Encoded, TokenId, Vocabulary, CLS, MASK, PAD, SEP};

use thiserror::Error;

use crate::grad::GradError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("{0} is empty")]
    EmptySegment(&'static str),
    #[error("encoded length {len} exceeds max_seq {max_seq}")]
    Overflow { len: usize, max_seq: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("attention override for layer {layer} has shape {got:?}, expected {expected:?}")]
    OverrideShape {
        layer: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[cfg(test)]
mod tests;
