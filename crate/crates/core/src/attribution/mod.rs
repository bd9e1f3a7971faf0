//! Token-level and pairwise attribution methods.
//!
//! Every method explains one scalar: the logit of the predicted answer on
//! the instance (`Target`), or for the surrogate methods its probability.
//! Maps are laid out over the full padded encoding; PAD positions hold zeros.

mod attention;
mod diffmask;
mod intgrad;
mod surrogate;

pub use attention::{
    atattr_pairs, attention_layer_attributions, default_candidate_pairs, latattr_pairs, occlusion_pairs,
    override_value, LayerAttributions,
};
pub use diffmask::{diffmask_per_example, DiffMaskConfig};
pub use intgrad::{integrated_gradients, intgrad_tokens, intgrad_tokens_detailed, TokenIntGrad};
pub use surrogate::{kernel_shap, kernelshap_tokens, lime, lime_tokens, SurrogateFit};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Encoded, Instance, MicroTransformer, ModelError, Prediction, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("integration steps must be at least 1, got {0}")]
    Steps(usize),
    #[error("{0} has no maskable tokens")]
    NothingToMask(String),
    #[error("{method}: sample count {samples} is too small for {features} features")]
    TooFewSamples {
        method: &'static str,
        samples: usize,
        features: usize,
    },
    #[error("candidate pair list is empty")]
    NoCandidates,
    #[error("candidate pair ({0}, {1}) lies outside the encoding")]
    BadCandidate(usize, usize),
    #[error("{method} diverged at step {step}")]
    Divergence { method: &'static str, step: usize },
    #[error("non-finite attribution from {0}")]
    NonFinite(&'static str),
    #[error("invalid attribution record: {0}")]
    Record(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Shap,
    IntGrad,
    DiffMask,
    /// Occlusion of everything but a pair of tokens.
    ArchIp,
    AtAttr,
    LAtAttr,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Lime,
        Method::Shap,
        Method::IntGrad,
        Method::DiffMask,
        Method::ArchIp,
        Method::AtAttr,
        Method::LAtAttr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::Shap => "shap",
            Method::IntGrad => "intgrad",
            Method::DiffMask => "diffmask",
            Method::ArchIp => "archip",
            Method::AtAttr => "atattr",
            Method::LAtAttr => "latattr",
        }
    }

    pub fn kind(self) -> MapKind {
        match self {
            Method::ArchIp | Method::AtAttr | Method::LAtAttr => MapKind::Pairwise,
            _ => MapKind::Token,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Token,
    Pairwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Signed,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub steps: usize,
    /// How head/layer attention attributions are summed into `s_ij`.
    pub pooling: Pooling,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            steps: 32,
            pooling: Pooling::Signed,
        }
    }
}

impl IntegrationConfig {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<(), AttributionError> {
        if self.steps == 0 {
            return Err(AttributionError::Steps(0));
        }
        Ok(())
    }

    /// Midpoint-rule interpolation coefficients.
    pub fn alphas(&self) -> impl Iterator<Item = f64> + '_ {
        let m = self.steps as f64;
        (1..=self.steps).map(move |k| (k as f64 - 0.5) / m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Number of sampled masks; `None` uses 1000 for LIME and 2000 for KernelSHAP.
    pub samples: Option<usize>,
    /// LIME kernel width on the normalized hamming distance.
    pub kernel_width: f64,
    pub mask_token: usize,
    pub seed: u64,
    /// Ridge penalty used when the regression is singular.
    pub ridge: f64,
    /// KernelSHAP enumerates every coalition up to this many features.
    pub exact_limit: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            samples: None,
            kernel_width: 0.25,
            mask_token: crate::model::MASK,
            seed: 0,
            ridge: 1e-6,
            exact_limit: 12,
        }
    }
}

/// A method together with its settings.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Lime(SurrogateConfig),
    Shap(SurrogateConfig),
    IntGrad(IntegrationConfig),
    DiffMask(DiffMaskConfig),
    /// `None` uses [`default_candidate_pairs`].
    ArchIp(Option<Vec<(usize, usize)>>),
    AtAttr(IntegrationConfig),
    LAtAttr(IntegrationConfig),
}

impl MethodConfig {
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Lime => MethodConfig::Lime(SurrogateConfig::default()),
            Method::Shap => MethodConfig::Shap(SurrogateConfig::default()),
            Method::IntGrad => MethodConfig::IntGrad(IntegrationConfig::default()),
            Method::DiffMask => MethodConfig::DiffMask(DiffMaskConfig::default()),
            Method::ArchIp => MethodConfig::ArchIp(None),
            Method::AtAttr => MethodConfig::AtAttr(IntegrationConfig::default()),
            Method::LAtAttr => MethodConfig::LAtAttr(IntegrationConfig::default()),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Lime(_) => Method::Lime,
            MethodConfig::Shap(_) => Method::Shap,
            MethodConfig::IntGrad(_) => Method::IntGrad,
            MethodConfig::DiffMask(_) => Method::DiffMask,
            MethodConfig::ArchIp(_) => Method::ArchIp,
            MethodConfig::AtAttr(_) => Method::AtAttr,
            MethodConfig::LAtAttr(_) => Method::LAtAttr,
        }
    }
}

/// Runs the configured method on one instance.
pub fn attribute(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &MethodConfig,
) -> Result<AttributionMap, AttributionError> {
    match cfg {
        MethodConfig::Lime(c) => lime_tokens(model, instance, c),
        MethodConfig::Shap(c) => kernelshap_tokens(model, instance, c),
        MethodConfig::IntGrad(c) => intgrad_tokens(model, instance, c),
        MethodConfig::DiffMask(c) => diffmask_per_example(model, instance, c),
        MethodConfig::ArchIp(pairs) => match pairs {
            Some(p) => occlusion_pairs(model, instance, p),
            None => occlusion_pairs(model, instance, &default_candidate_pairs(instance)),
        },
        MethodConfig::AtAttr(c) => atattr_pairs(model, instance, c),
        MethodConfig::LAtAttr(c) => latattr_pairs(model, instance, c),
    }
}

/// Scores over the padded encoding of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MapRecord", try_from = "MapRecord")]
pub struct AttributionMap {
    pub method: Method,
    pub instance_id: String,
    pub kind: MapKind,
    /// Encoded length `n`.
    pub len: usize,
    /// `n` token scores, or `n × n` pair scores row-major.
    pub scores: Vec<f64>,
    pub target: Target,
    pub m: Option<usize>,
    pub seed: Option<u64>,
    /// Notes such as `ridge-fallback`.
    pub flags: Vec<String>,
}

impl AttributionMap {
    pub fn token(&self, i: usize) -> f64 {
        debug_assert_eq!(self.kind, MapKind::Token);
        self.scores[i]
    }

    pub fn pair(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.kind, MapKind::Pairwise);
        self.scores[i * self.len + j]
    }

    pub fn is_finite(&self) -> bool {
        self.scores.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Scores {
    Dense(Vec<f64>),
    /// Non-zero `(i, j, s_ij)` cells.
    Sparse(Vec<(usize, usize, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MapRecord {
    method: Method,
    instance_id: String,
    kind: MapKind,
    len: usize,
    scores: Scores,
    target: Target,
    m: Option<usize>,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    flags: Vec<String>,
}

impl From<AttributionMap> for MapRecord {
    fn from(a: AttributionMap) -> Self {
        let scores = match a.kind {
            MapKind::Token => Scores::Dense(a.scores),
            MapKind::Pairwise => Scores::Sparse(
                a.scores
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(k, v)| (k / a.len, k % a.len, *v))
                    .collect(),
            ),
        };
        MapRecord {
            method: a.method,
            instance_id: a.instance_id,
            kind: a.kind,
            len: a.len,
            scores,
            target: a.target,
            m: a.m,
            seed: a.seed,
            flags: a.flags,
        }
    }
}

impl TryFrom<MapRecord> for AttributionMap {
    type Error = AttributionError;

    fn try_from(r: MapRecord) -> Result<Self, Self::Error> {
        let scores = match (r.kind, r.scores) {
            (MapKind::Token, Scores::Dense(v)) if v.len() == r.len => v,
            (MapKind::Pairwise, Scores::Sparse(cells)) => {
                let mut v = vec![0.0; r.len * r.len];
                for (i, j, s) in cells {
                    if i >= r.len || j >= r.len {
                        return Err(AttributionError::Record(format!("cell ({i}, {j}) outside {}", r.len)));
                    }
                    v[i * r.len + j] = s;
                }
                v
            }
            (kind, _) => {
                return Err(AttributionError::Record(format!(
                    "{kind:?} scores do not match declared length {}",
                    r.len
                )))
            }
        };
        Ok(AttributionMap {
            method: r.method,
            instance_id: r.instance_id,
            kind: r.kind,
            len: r.len,
            scores,
            target: r.target,
            m: r.m,
            seed: r.seed,
            flags: r.flags,
        })
    }
}

/// The base example as the methods see it.
pub(crate) struct Prepared {
    /// Full padded encoding; its length is the map length.
    pub full_len: usize,
    /// Encoding without trailing PAD, used for evaluation.
    pub seq: Encoded,
    pub prediction: Prediction,
}

pub(crate) fn prepare(model: &MicroTransformer, instance: &Instance) -> Result<Prepared, AttributionError> {
    let full = model.encode(instance)?;
    let seq = full.trimmed();
    let prediction = model.predict_encoded(&seq, instance.head())?;
    Ok(Prepared {
        full_len: full.len(),
        seq,
        prediction,
    })
}

pub(crate) fn token_map(
    method: Method,
    instance: &Instance,
    prepared: &Prepared,
    trimmed_scores: &[f64],
) -> AttributionMap {
    let mut scores = vec![0.0; prepared.full_len];
    scores[..trimmed_scores.len()].copy_from_slice(trimmed_scores);
    AttributionMap {
        method,
        instance_id: instance.id.clone(),
        kind: MapKind::Token,
        len: prepared.full_len,
        scores,
        target: prepared.prediction.target,
        m: None,
        seed: None,
        flags: Vec::new(),
    }
}

/// Pads an `l × l` matrix into the `n × n` map.
pub(crate) fn pair_map(
    method: Method,
    instance: &Instance,
    prepared: &Prepared,
    trimmed: &[f64],
    l: usize,
) -> AttributionMap {
    let n = prepared.full_len;
    let mut scores = vec![0.0; n * n];
    for i in 0..l {
        scores[i * n..i * n + l].copy_from_slice(&trimmed[i * l..(i + 1) * l]);
    }
    AttributionMap {
        method,
        instance_id: instance.id.clone(),
        kind: MapKind::Pairwise,
        len: n,
        scores,
        target: prepared.prediction.target,
        m: None,
        seed: None,
        flags: Vec::new(),
    }
}
