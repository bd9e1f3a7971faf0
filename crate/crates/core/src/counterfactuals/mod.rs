//! Synthetic QA tasks and their counterfactual neighborhoods.

mod generate;
pub mod lexicon;
mod neighborhood;

pub use generate::{
    comparison_shortcut_label, contains_run, gen_bridge, gen_bridge_with, gen_comparison, gen_comparison_shortcut,
    gen_distractor, gen_distractor_training, gen_distractor_with, BridgeOptions, DistractorOptions,
};
pub use neighborhood::{
    build_neighborhood, label_from_answers, label_neighborhood, AnswerText, Neighborhood, Setting,
};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterfactualError {
    #[error("instance {instance}: missing {what}")]
    MissingMetadata { instance: String, what: String },
    #[error("instance {0}: every neighborhood member has the same gold answer")]
    IdenticalGroundTruth(String),
    #[error("instance {instance}: {found} distractor attacks attached, at least 3 required")]
    TooFewAttacks { instance: String, found: usize },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CounterfactualError> {
    let io = |e: std::io::Error| CounterfactualError::Io(format!("{}: {e}", path.display()));
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| CounterfactualError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CounterfactualError> {
    let text =
        fs::read_to_string(path).map_err(|e| CounterfactualError::Io(format!("{}: {e}", path.display())))?;
    parse_jsonl(&text, &path.display().to_string())
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>, CounterfactualError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CounterfactualError::Parse {
                path: origin.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
