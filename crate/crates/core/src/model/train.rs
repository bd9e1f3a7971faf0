use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{AnswerDistribution, MicroTransformer, Objective, Request};
use super::{Encoded, Instance, ModelError};
use crate::grad::{GradError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub target_accuracy: f64,
    pub seed: u64,
    /// Global gradient-norm clip per minibatch.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 32,
            max_epochs: 50,
            target_accuracy: 0.99,
            seed: 0,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each update.
    pub running_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
    /// Accuracy of the final weights on the full training set.
    pub train_accuracy: f64,
    pub reached_target: bool,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    fn new(shapes: &[&Tensor]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
            }
            let v = self.v[i].data_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for (j, pj) in p.data_mut().iter_mut().enumerate() {
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *pj -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Fraction of instances whose predicted answer equals the gold answer.
pub fn accuracy(model: &MicroTransformer, data: &[Instance]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut correct = 0usize;
    for inst in data {
        if model.predict(inst)?.answer == inst.answer {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Minibatch Adam on the gold-answer cross-entropy.
///
/// Stops after the first epoch whose final weights reach
/// `target_accuracy` on the training set, or after `max_epochs`.
pub fn train(
    model: &mut MicroTransformer,
    data: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainingMetrics, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let encoded: Vec<Encoded> = data
        .iter()
        .map(|inst| model.encode(inst).map(|e| e.trimmed()))
        .collect::<Result<_, _>>()?;
    let gold: Vec<AnswerDistribution> = data
        .iter()
        .zip(&encoded)
        .map(|(inst, seq)| AnswerDistribution::gold(&inst.answer, seq))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.weights.tensors());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut train_accuracy = if cfg.max_epochs == 0 { accuracy(model, data)? } else { 0.0 };
    let mut reached = false;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Tensor>> = None;
            for &i in batch {
                let mut req = Request::new(&encoded[i]);
                req.objective = Objective::CrossEntropy(gold[i].clone());
                req.param_grads = true;
                let out = model.evaluate(&req).map_err(|e| match e {
                    ModelError::Grad(GradError::NonFinite { .. }) => ModelError::Divergence { epoch },
                    other => other,
                })?;
                let loss = out.objective.expect("objective requested");
                if !loss.is_finite() {
                    return Err(ModelError::Divergence { epoch });
                }
                loss_sum += loss;
                let pred = model.decide(&out.logits, data[i].head(), &encoded[i].context);
                if pred.answer == data[i].answer {
                    correct += 1;
                }
                let grads = out.param_grads.expect("param grads requested");
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (x, g) in a.iter_mut().zip(&grads) {
                            x.add_assign(g);
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            if let Some(max_norm) = cfg.clip_norm {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data().iter())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if !norm.is_finite() {
                    return Err(ModelError::Divergence { epoch });
                }
                if norm > max_norm {
                    let f = max_norm / norm;
                    for g in &mut grads {
                        for v in g.data_mut() {
                            *v *= f;
                        }
                    }
                }
            }
            adam.update(model.weights.tensors_mut(), &grads, cfg.learning_rate);
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            running_accuracy: correct as f64 / data.len() as f64,
        };
        history.push(stats);
        if stats.running_accuracy >= cfg.target_accuracy || epoch + 1 == cfg.max_epochs {
            train_accuracy = accuracy(model, data)?;
            if train_accuracy >= cfg.target_accuracy {
                reached = true;
                break;
            }
        }
    }

    Ok(TrainingMetrics {
        epochs_run: history.len(),
        history,
        train_accuracy,
        reached_target: reached,
    })
}
