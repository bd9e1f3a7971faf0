use std::collections::BTreeMap;

use super::{pair_map, prepare, AttributionError, AttributionMap, IntegrationConfig, Method, Pooling};
use crate::grad::Tensor;
use crate::model::{AttentionStack, Encoded, Instance, MicroTransformer, Objective, Request, Target, MASK};

/// Raw per-layer attention attributions `A ⊙ mean ∂F/∂A`, each `[heads, len, len]`
/// over the trimmed encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttributions {
    pub layers: Vec<Tensor>,
    pub natural: AttentionStack,
    pub seq: Encoded,
    pub target: Target,
    pub steps: usize,
}

impl LayerAttributions {
    /// `s_ij` summed over heads and layers, `len × len`.
    pub fn pooled(&self, pooling: Pooling) -> Vec<f64> {
        let n = self.seq.len();
        let mut out = vec![0.0; n * n];
        for layer in &self.layers {
            for block in layer.data().chunks(n * n) {
                for (o, v) in out.iter_mut().zip(block) {
                    *o += match pooling {
                        Pooling::Signed => *v,
                        Pooling::Absolute => v.abs(),
                    };
                }
            }
        }
        out
    }

    pub fn layer_total(&self, layer: usize) -> f64 {
        self.layers[layer].sum()
    }
}

/// Target value with the listed layers' attention replaced.
pub fn override_value(
    model: &MicroTransformer,
    seq: &Encoded,
    target: Target,
    overrides: &BTreeMap<usize, Tensor>,
) -> Result<f64, AttributionError> {
    let mut req = Request::new(seq);
    req.overrides = Some(overrides);
    req.objective = Objective::Target(target);
    Ok(model.evaluate(&req)?.objective.expect("target"))
}

/// Integrates the target gradient along `αA`.
///
/// With `layerwise = false` every layer is scaled at once; otherwise each
/// layer is integrated on its own while the others compute their attention
/// from the intervened activations.
pub fn attention_layer_attributions(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &IntegrationConfig,
    layerwise: bool,
) -> Result<LayerAttributions, AttributionError> {
    cfg.validate()?;
    let prepared = prepare(model, instance)?;
    let seq = prepared.seq;
    let target = prepared.prediction.target;
    let natural = model.evaluate(&Request::new(&seq))?.attention;
    let layers = natural.layers.len();
    let mut sums: Vec<Tensor> = natural.layers.iter().map(|a| Tensor::zeros(a.shape())).collect();

    let integrate = |which: &[usize], sums: &mut Vec<Tensor>| -> Result<(), AttributionError> {
        for alpha in cfg.alphas() {
            let overrides: BTreeMap<usize, Tensor> =
                which.iter().map(|&l| (l, natural.layers[l].scaled(alpha))).collect();
            let mut req = Request::new(&seq);
            req.overrides = Some(&overrides);
            req.objective = Objective::Target(target);
            let out = model.evaluate(&req)?;
            for (l, g) in &out.override_grads {
                sums[*l].add_assign(g);
            }
        }
        Ok(())
    };
    if layerwise {
        for l in 0..layers {
            integrate(&[l], &mut sums)?;
        }
    } else {
        let all: Vec<usize> = (0..layers).collect();
        integrate(&all, &mut sums)?;
    }

    let m = cfg.steps as f64;
    let attributions: Vec<Tensor> = sums
        .into_iter()
        .zip(&natural.layers)
        .map(|(g, a)| a.hadamard(&g).scaled(1.0 / m))
        .collect();
    if attributions.iter().any(|t| !t.is_finite()) {
        return Err(AttributionError::NonFinite(if layerwise { "latattr" } else { "atattr" }));
    }
    Ok(LayerAttributions {
        layers: attributions,
        natural,
        seq,
        target,
        steps: cfg.steps,
    })
}

fn attention_pairs(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &IntegrationConfig,
    method: Method,
) -> Result<AttributionMap, AttributionError> {
    let raw = attention_layer_attributions(model, instance, cfg, method == Method::LAtAttr)?;
    let prepared = prepare(model, instance)?;
    let l = raw.seq.len();
    let mut map = pair_map(method, instance, &prepared, &raw.pooled(cfg.pooling), l);
    map.m = Some(cfg.steps);
    Ok(map)
}

/// Attention attribution with all layers scaled together.
pub fn atattr_pairs(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &IntegrationConfig,
) -> Result<AttributionMap, AttributionError> {
    attention_pairs(model, instance, cfg, Method::AtAttr)
}

/// Layer-wise attention attribution, pooled over heads and layers.
pub fn latattr_pairs(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &IntegrationConfig,
) -> Result<AttributionMap, AttributionError> {
    attention_pairs(model, instance, cfg, Method::LAtAttr)
}

/// Question keyword × salient context word pairs, as encoded positions.
///
/// Falls back to all question (or context) words when an annotation is missing.
pub fn default_candidate_pairs(instance: &Instance) -> Vec<(usize, usize)> {
    let q_off = 1;
    let c_off = instance.question.len() + 2;
    let meta = &instance.metadata;
    let qs: Vec<usize> = if meta.keywords.is_empty() {
        (0..instance.question.len()).collect()
    } else {
        meta.keywords.clone()
    };
    let cs: Vec<usize> = if meta.salient.is_empty() {
        (0..instance.context.len()).collect()
    } else {
        meta.salient.clone()
    };
    qs.iter()
        .flat_map(|&q| cs.iter().map(move |&c| (q + q_off, c + c_off)))
        .collect()
}

/// Target logit with every word except `i` and `j` masked, written to both `(i, j)` and `(j, i)`.
pub fn occlusion_pairs(
    model: &MicroTransformer,
    instance: &Instance,
    pairs: &[(usize, usize)],
) -> Result<AttributionMap, AttributionError> {
    if pairs.is_empty() {
        return Err(AttributionError::NoCandidates);
    }
    let prepared = prepare(model, instance)?;
    let seq = &prepared.seq;
    let l = seq.len();
    let target = prepared.prediction.target;
    let words = seq.word_positions();
    let mut scores = vec![0.0; l * l];
    for &(i, j) in pairs {
        if i >= l || j >= l {
            return Err(AttributionError::BadCandidate(i, j));
        }
        let mut masked = seq.clone();
        for &p in &words {
            if p != i && p != j {
                masked.ids[p] = MASK;
            }
        }
        let out = model.evaluate(&Request::new(&masked))?;
        let s = out.logits.target_logit(target);
        if !s.is_finite() {
            return Err(AttributionError::NonFinite("archip"));
        }
        scores[i * l + j] = s;
        scores[j * l + i] = s;
    }
    Ok(pair_map(Method::ArchIp, instance, &prepared, &scores, l))
}
