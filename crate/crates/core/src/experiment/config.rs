use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::attribution::{DiffMaskConfig, IntegrationConfig, Method, MethodConfig, SurrogateConfig};
use crate::counterfactuals::Setting;
use crate::model::{ModelConfig, TrainConfig, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Trained on data that needs the intended reasoning.
    Proper,
    /// Trained on data where a shortcut suffices.
    Shortcut,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Proper => "proper",
            Variant::Shortcut => "shortcut",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub train_count: usize,
    /// Base examples per variant.
    pub eval_count: usize,
    /// Bridge training only: rate of same-attribute sentences about other people.
    pub distractor_rate: f64,
    /// Distractor training only: fraction of instances carrying an attack.
    pub attack_rate: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_count: 2000,
            eval_count: 50,
            distractor_rate: 0.6,
            attack_rate: 0.5,
        }
    }
}

/// Model shape; the vocabulary size follows from the synthetic lexicon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub max_seq: usize,
    pub ffn: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            hidden: 32,
            max_seq: 64,
            ffn: 64,
        }
    }
}

impl ModelSpec {
    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            hidden: self.hidden,
            max_seq: self.max_seq,
            ffn: self.ffn,
            vocab_size: Vocabulary::synthetic().len(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    setting: Value,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    dataset: DatasetConfig,
    #[serde(default)]
    model: ModelSpec,
    #[serde(default)]
    training: TrainConfig,
    #[serde(default)]
    variants: Option<Vec<Value>>,
    methods: Vec<Map<String, Value>>,
    #[serde(default)]
    absolute_factors: bool,
    output_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ArchIpSettings {
    pairs: Option<Vec<(usize, usize)>>,
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub training: TrainConfig,
    pub variants: Vec<Variant>,
    pub methods: Vec<MethodConfig>,
    pub absolute_factors: bool,
    pub output_dir: PathBuf,
    /// SHA-256 of the canonical JSON form.
    pub hash: String,
}

fn line_of(text: &str, needle: &str) -> Option<usize> {
    text.lines().position(|l| l.contains(needle)).map(|i| i + 1)
}

fn invalid(text: &str, field: impl Into<String>, needle: Option<&str>, message: impl Into<String>) -> ExperimentError {
    let field = field.into();
    let line = needle
        .and_then(|n| line_of(text, n))
        .or_else(|| line_of(text, &format!("\"{}\"", field.rsplit('.').next().unwrap_or(&field))));
    ExperimentError::Config {
        line,
        field,
        message: message.into(),
    }
}

fn parse_method(text: &str, index: usize, entry: &Map<String, Value>) -> Result<MethodConfig, ExperimentError> {
    let field = format!("methods[{index}].method");
    let name = match entry.get("method") {
        Some(Value::String(s)) => s.as_str(),
        Some(other) => return Err(invalid(text, field, None, format!("expected a method name, found {other}"))),
        None => return Err(invalid(text, field, None, "missing")),
    };
    let needle = format!("\"{name}\"");
    let method: Method = name.parse().map_err(|_| {
        let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        invalid(
            text,
            field.clone(),
            Some(&needle),
            format!("unknown method {name:?}, expected one of {}", known.join(", ")),
        )
    })?;
    let mut settings = entry.clone();
    settings.remove("method");
    let settings = Value::Object(settings);
    let bad = |e: serde_json::Error| invalid(text, format!("methods[{index}]"), Some(&needle), format!("{name}: {e}"));
    Ok(match method {
        Method::Lime => MethodConfig::Lime(serde_json::from_value::<SurrogateConfig>(settings).map_err(bad)?),
        Method::Shap => MethodConfig::Shap(serde_json::from_value::<SurrogateConfig>(settings).map_err(bad)?),
        Method::IntGrad => MethodConfig::IntGrad(serde_json::from_value::<IntegrationConfig>(settings).map_err(bad)?),
        Method::DiffMask => MethodConfig::DiffMask(serde_json::from_value::<DiffMaskConfig>(settings).map_err(bad)?),
        Method::ArchIp => MethodConfig::ArchIp(serde_json::from_value::<ArchIpSettings>(settings).map_err(bad)?.pairs),
        Method::AtAttr => MethodConfig::AtAttr(serde_json::from_value::<IntegrationConfig>(settings).map_err(bad)?),
        Method::LAtAttr => MethodConfig::LAtAttr(serde_json::from_value::<IntegrationConfig>(settings).map_err(bad)?),
    })
}

fn check_steps(text: &str, index: usize, cfg: &MethodConfig) -> Result<(), ExperimentError> {
    let steps = match cfg {
        MethodConfig::IntGrad(c) | MethodConfig::AtAttr(c) | MethodConfig::LAtAttr(c) => c.steps,
        MethodConfig::DiffMask(c) => c.steps.max(1),
        _ => 1,
    };
    if steps == 0 {
        return Err(invalid(text, format!("methods[{index}].steps"), Some("\"steps\""), "must be at least 1"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config {
            line: None,
            field: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ExperimentError::Config {
            line: Some(e.line()),
            field: "config".into(),
            message: e.to_string(),
        })?;
        let canonical = serde_json::to_string(&raw).expect("config serializes");
        let hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));

        let setting = match &raw.setting {
            Value::String(s) => s
                .parse::<Setting>()
                .map_err(|m| invalid(text, "setting", None, format!("{m}, expected yes-no, bridge or distractor")))?,
            other => return Err(invalid(text, "setting", None, format!("expected a string, found {other}"))),
        };
        let variants = match &raw.variants {
            None => vec![Variant::Proper],
            Some(list) => {
                let mut out = Vec::new();
                for (i, v) in list.iter().enumerate() {
                    let parsed: Variant = serde_json::from_value(v.clone()).map_err(|_| {
                        invalid(
                            text,
                            format!("variants[{i}]"),
                            Some(&v.to_string()),
                            format!("unknown variant {v}, expected proper or shortcut"),
                        )
                    })?;
                    if out.contains(&parsed) {
                        return Err(invalid(text, format!("variants[{i}]"), Some(&v.to_string()), "listed twice"));
                    }
                    out.push(parsed);
                }
                if out.is_empty() {
                    return Err(invalid(text, "variants", None, "must not be empty"));
                }
                out
            }
        };
        if raw.methods.is_empty() {
            return Err(invalid(text, "methods", None, "must list at least one method"));
        }
        let mut methods: Vec<MethodConfig> = Vec::with_capacity(raw.methods.len());
        for (i, entry) in raw.methods.iter().enumerate() {
            let m = parse_method(text, i, entry)?;
            check_steps(text, i, &m)?;
            if methods.iter().any(|x| x.method() == m.method()) {
                let name = m.method().name();
                return Err(invalid(
                    text,
                    format!("methods[{i}].method"),
                    Some(&format!("\"{name}\"")),
                    format!("{name} listed twice"),
                ));
            }
            methods.push(m);
        }
        raw.model
            .config()
            .validate()
            .map_err(|e| invalid(text, "model", None, e.to_string()))?;
        if raw.training.batch_size == 0 {
            return Err(invalid(text, "training.batch_size", None, "must be positive"));
        }
        if raw.dataset.train_count == 0 || raw.dataset.eval_count == 0 {
            return Err(invalid(text, "dataset", None, "train_count and eval_count must be positive"));
        }
        Ok(ExperimentConfig {
            setting,
            seed: raw.seed,
            dataset: raw.dataset,
            model: raw.model,
            training: raw.training,
            variants,
            methods,
            absolute_factors: raw.absolute_factors,
            output_dir: raw.output_dir,
            hash,
        })
    }

    /// `{config_hash, seed}` stamped into every artifact.
    pub fn provenance(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("config_hash".into(), Value::String(self.hash.clone()));
        m.insert("seed".into(), Value::from(self.seed));
        m
    }
}
