use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MicroTransformer, ModelConfig, ModelError, Vocabulary};
use crate::grad::Tensor;

pub const CHECKPOINT_FORMAT: &str = "attrsim-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON container: config, vocabulary and flat weight arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: Vec<NamedTensor>,
    /// Free-form provenance (config hash, seed).
    #[serde(default)]
    pub provenance: serde_json::Map<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn from_model(model: &MicroTransformer) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            config: model.config,
            vocab: model.vocab.clone(),
            params: model
                .weights
                .named()
                .into_iter()
                .map(|(name, t)| NamedTensor {
                    name,
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            provenance: Default::default(),
        }
    }

    pub fn into_model(self) -> Result<MicroTransformer, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unexpected format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut model = MicroTransformer::new(self.config, self.vocab, 0)?;
        let names: Vec<String> = model.weights.named().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((slot, name), stored) in model.weights.tensors_mut().into_iter().zip(&names).zip(self.params) {
            if &stored.name != name || stored.shape != slot.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {:?} {:?} does not match {name:?} {:?}",
                    stored.name,
                    stored.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(stored.shape, stored.data)?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), ModelError> {
    let text = serde_json::to_string(checkpoint).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    fs::write(path, text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let text =
        fs::read_to_string(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))
}
