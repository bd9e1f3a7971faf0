use serde::{Deserialize, Serialize};

use super::{prepare, token_map, AttributionError, AttributionMap, Method};
use crate::grad::Tensor;
use crate::model::{AnswerDistribution, Instance, MicroTransformer, Objective, Request, MASK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffMaskConfig {
    /// Weight of the `Σ g_i` penalty.
    pub sparsity: f64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Initial gate logit; 5 starts every gate near 1.
    pub init_logit: f64,
}

impl Default for DiffMaskConfig {
    fn default() -> Self {
        Self {
            sparsity: 0.05,
            steps: 100,
            learning_rate: 0.1,
            init_logit: 5.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fits one gate per question/context word so that the gated embeddings
/// `g·e + (1 − g)·e_MASK` keep the answer distribution close (in KL) to the
/// original one while `sparsity · Σg` pushes gates toward zero. Scores are
/// the final gates; special tokens are never gated and score zero.
pub fn diffmask_per_example(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &DiffMaskConfig,
) -> Result<AttributionMap, AttributionError> {
    let prepared = prepare(model, instance)?;
    let seq = &prepared.seq;
    let positions = seq.word_positions();
    if positions.is_empty() {
        return Err(AttributionError::NothingToMask(instance.id.clone()));
    }
    let original = AnswerDistribution::from_logits(&prepared.prediction.logits, instance.head(), &seq.context);
    let neg_entropy = original.neg_entropy();
    let embeddings = model.token_embeddings(&seq.ids);
    let mask_row = model.weights.token_embedding.row_slice(MASK).to_vec();
    let d = model.config.hidden;

    let mut theta = vec![cfg.init_logit; positions.len()];
    let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);

    for step in 0..cfg.steps {
        let gates: Vec<f64> = theta.iter().map(|&t| sigmoid(t)).collect();
        let mut gated = embeddings.clone();
        for (&p, &g) in positions.iter().zip(&gates) {
            let row = &mut gated.data_mut()[p * d..(p + 1) * d];
            for (x, mk) in row.iter_mut().zip(&mask_row) {
                *x = g * *x + (1.0 - g) * mk;
            }
        }
        let mut req = Request::new(seq);
        req.embeddings = Some(&gated);
        req.objective = Objective::CrossEntropy(original.clone());
        let out = model.evaluate(&req).map_err(|_| AttributionError::Divergence {
            method: "diffmask",
            step,
        })?;
        let kl = out.objective.expect("objective") + neg_entropy;
        if !kl.is_finite() {
            return Err(AttributionError::Divergence {
                method: "diffmask",
                step,
            });
        }
        let grad: Tensor = out.embedding_grad.expect("embedding input is marked");
        let t = (step + 1) as i32;
        for (k, &p) in positions.iter().enumerate() {
            let e = embeddings.row_slice(p);
            let dg: f64 = grad.row_slice(p).iter().zip(e.iter().zip(&mask_row)).map(|(g, (x, mk))| g * (x - mk)).sum();
            let g = gates[k];
            let dtheta = (dg + cfg.sparsity) * g * (1.0 - g);
            m[k] = b1 * m[k] + (1.0 - b1) * dtheta;
            v[k] = b2 * v[k] + (1.0 - b2) * dtheta * dtheta;
            let mhat = m[k] / (1.0 - b1.powi(t));
            let vhat = v[k] / (1.0 - b2.powi(t));
            theta[k] -= cfg.learning_rate * mhat / (vhat.sqrt() + eps);
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(AttributionError::Divergence {
                method: "diffmask",
                step,
            });
        }
    }

    let mut scores = vec![0.0; seq.len()];
    for (&p, &t) in positions.iter().zip(&theta) {
        scores[p] = sigmoid(t);
    }
    let mut map = token_map(Method::DiffMask, instance, &prepared, &scores);
    map.m = Some(cfg.steps);
    Ok(map)
}
