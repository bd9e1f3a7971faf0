use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{Encoded, TokenId, Vocabulary, PAD};
use super::{Answer, Head, Instance, ModelError};
use crate::grad::{masked_softmax_row, Axis, Bindings, NodeId, Tape, Tensor};

/// Longest span (in tokens) the span head may return.
pub const MAX_ANSWER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub max_seq: usize,
    /// Width of the feed-forward block.
    pub ffn: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 64,
            max_seq: 64,
            ffn: 128,
            vocab_size: Vocabulary::synthetic().len(),
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("max_seq", self.max_seq),
            ("ffn", self.ffn),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.hidden % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden {} is not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub query: Tensor,
    pub query_bias: Tensor,
    pub key: Tensor,
    pub key_bias: Tensor,
    pub value: Tensor,
    pub value_bias: Tensor,
    pub output: Tensor,
    pub output_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ffn_in: Tensor,
    pub ffn_in_bias: Tensor,
    pub ffn_out: Tensor,
    pub ffn_out_bias: Tensor,
}

impl LayerWeights {
    fn fields(&self) -> [(&'static str, &Tensor); 16] {
        [
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("query", &self.query),
            ("query_bias", &self.query_bias),
            ("key", &self.key),
            ("key_bias", &self.key_bias),
            ("value", &self.value),
            ("value_bias", &self.value_bias),
            ("output", &self.output),
            ("output_bias", &self.output_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
            ("ffn_in", &self.ffn_in),
            ("ffn_in_bias", &self.ffn_in_bias),
            ("ffn_out", &self.ffn_out),
            ("ffn_out_bias", &self.ffn_out_bias),
        ]
    }

    fn fields_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.query,
            &mut self.query_bias,
            &mut self.key,
            &mut self.key_bias,
            &mut self.value,
            &mut self.value_bias,
            &mut self.output,
            &mut self.output_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ffn_in,
            &mut self.ffn_in_bias,
            &mut self.ffn_out,
            &mut self.ffn_out_bias,
        ]
    }
}

/// All trainable tensors of the encoder and both QA heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    /// `[hidden, 2]`, column 0 = "no", column 1 = "yes".
    pub yes_no: Tensor,
    pub yes_no_bias: Tensor,
    pub span_start: Tensor,
    pub span_end: Tensor,
}

impl Weights {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let mut normal = |shape: &[usize], std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            let n: usize = shape.iter().product();
            Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(&mut rng)).collect())
                .expect("shape")
        };
        let token_embedding = normal(&[config.vocab_size, d], 0.5);
        let position_embedding = normal(&[config.max_seq, d], 0.5);
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let layers = (0..config.layers)
            .map(|_| LayerWeights {
                ln1_gain: Tensor::filled(&[1, d], 1.0),
                ln1_bias: Tensor::zeros(&[1, d]),
                query: normal(&[d, d], inv(d)),
                query_bias: Tensor::zeros(&[1, d]),
                key: normal(&[d, d], inv(d)),
                key_bias: Tensor::zeros(&[1, d]),
                value: normal(&[d, d], inv(d)),
                value_bias: Tensor::zeros(&[1, d]),
                output: normal(&[d, d], 0.5 * inv(d)),
                output_bias: Tensor::zeros(&[1, d]),
                ln2_gain: Tensor::filled(&[1, d], 1.0),
                ln2_bias: Tensor::zeros(&[1, d]),
                ffn_in: normal(&[d, config.ffn], inv(d)),
                ffn_in_bias: Tensor::zeros(&[1, config.ffn]),
                ffn_out: normal(&[config.ffn, d], 0.5 * inv(config.ffn)),
                ffn_out_bias: Tensor::zeros(&[1, d]),
            })
            .collect();
        Self {
            token_embedding,
            position_embedding,
            layers,
            final_gain: Tensor::filled(&[1, d], 1.0),
            final_bias: Tensor::zeros(&[1, d]),
            yes_no: normal(&[d, 2], 0.02),
            yes_no_bias: Tensor::zeros(&[1, 2]),
            span_start: normal(&[1, d], 0.02),
            span_end: normal(&[1, d], 0.02),
        }
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embedding".to_owned(), &self.token_embedding),
            ("position_embedding".to_owned(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.fields() {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.extend([
            ("final_gain".to_owned(), &self.final_gain),
            ("final_bias".to_owned(), &self.final_bias),
            ("yes_no".to_owned(), &self.yes_no),
            ("yes_no_bias".to_owned(), &self.yes_no_bias),
            ("span_start".to_owned(), &self.span_start),
            ("span_end".to_owned(), &self.span_end),
        ]);
        out
    }

    /// Mutable view in the same order as [`Weights::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out.extend([
            &mut self.final_gain,
            &mut self.final_bias,
            &mut self.yes_no,
            &mut self.yes_no_bias,
            &mut self.span_start,
            &mut self.span_end,
        ]);
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }
}

/// What the value being explained is: a yes/no logit or a span's start+end logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Class index, 0 = no, 1 = yes.
    YesNo(usize),
    /// Absolute sequence positions of the first and last answer token.
    Span { start: usize, last: usize },
}

/// Raw head outputs over the evaluated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaLogits {
    pub yes_no: [f64; 2],
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl QaLogits {
    pub fn target_logit(&self, target: Target) -> f64 {
        match target {
            Target::YesNo(c) => self.yes_no[c],
            Target::Span { start, last } => self.start[start] + self.end[last],
        }
    }

    /// Softmax probability of `target` under the head's distribution.
    pub fn target_probability(&self, target: Target, context: &std::ops::Range<usize>) -> f64 {
        match target {
            Target::YesNo(c) => masked_softmax_row(&self.yes_no, None)[c],
            Target::Span { start, last } => {
                let keep = context_keep(self.start.len(), context);
                let ps = masked_softmax_row(&self.start, Some(&keep));
                let pe = masked_softmax_row(&self.end, Some(&keep));
                ps[start] * pe[last]
            }
        }
    }
}

/// Answer distribution used by cross-entropy objectives.
#[derive(Debug, Clone, PartialEq)]
pub enum AnswerDistribution {
    YesNo([f64; 2]),
    /// Start and end distributions over sequence positions.
    Span { start: Vec<f64>, end: Vec<f64> },
}

impl AnswerDistribution {
    /// One-hot distribution for a gold answer on `seq`.
    pub fn gold(answer: &Answer, seq: &Encoded) -> Self {
        match *answer {
            Answer::YesNo(yes) => AnswerDistribution::YesNo(if yes { [0.0, 1.0] } else { [1.0, 0.0] }),
            Answer::Span { start, end } => {
                let n = seq.len();
                let mut s = vec![0.0; n];
                let mut e = vec![0.0; n];
                s[seq.context.start + start] = 1.0;
                e[seq.context.start + end - 1] = 1.0;
                AnswerDistribution::Span { start: s, end: e }
            }
        }
    }

    /// The model's own distribution under `head`.
    pub fn from_logits(logits: &QaLogits, head: Head, context: &std::ops::Range<usize>) -> Self {
        match head {
            Head::YesNo => {
                let p = masked_softmax_row(&logits.yes_no, None);
                AnswerDistribution::YesNo([p[0], p[1]])
            }
            Head::Span => {
                let keep = context_keep(logits.start.len(), context);
                AnswerDistribution::Span {
                    start: masked_softmax_row(&logits.start, Some(&keep)),
                    end: masked_softmax_row(&logits.end, Some(&keep)),
                }
            }
        }
    }

    /// `Σ p log p`, i.e. minus the entropy, used to turn cross-entropy into KL.
    pub fn neg_entropy(&self) -> f64 {
        let h = |p: &[f64]| p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>();
        match self {
            AnswerDistribution::YesNo(p) => h(p),
            AnswerDistribution::Span { start, end } => h(start) + h(end),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    None,
    Target(Target),
    CrossEntropy(AnswerDistribution),
}

/// One forward (and optional backward) evaluation.
#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub seq: &'a Encoded,
    /// Token embeddings `[len, hidden]` fed in place of the lookup; gradients are returned for them.
    pub embeddings: Option<&'a Tensor>,
    /// Layer → `[heads, len, len]` post-softmax attention replacing the computed one.
    pub overrides: Option<&'a BTreeMap<usize, Tensor>>,
    pub objective: Objective,
    pub param_grads: bool,
}

impl<'a> Request<'a> {
    pub fn new(seq: &'a Encoded) -> Self {
        Self {
            seq,
            embeddings: None,
            overrides: None,
            objective: Objective::None,
            param_grads: false,
        }
    }
}

/// Post-softmax attention for every layer, each `[heads, len, len]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStack {
    pub layers: Vec<Tensor>,
}

impl AttentionStack {
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            layers: self.layers.iter().map(|t| t.scaled(alpha)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub logits: QaLogits,
    /// Attention as used by each layer (computed or overridden).
    pub attention: AttentionStack,
    /// Objective value, when one was requested.
    pub objective: Option<f64>,
    pub embedding_grad: Option<Tensor>,
    pub override_grads: BTreeMap<usize, Tensor>,
    /// Gradients in [`Weights::named`] order.
    pub param_grads: Option<Vec<Tensor>>,
}

/// Model prediction on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer: Answer,
    pub confidence: f64,
    pub logits: QaLogits,
    /// The logit the attribution methods explain for this prediction.
    pub target: Target,
}

pub(crate) fn context_keep(len: usize, context: &std::ops::Range<usize>) -> Vec<bool> {
    (0..len).map(|i| context.contains(&i)).collect()
}

/// Small trainable transformer encoder with a yes/no head and a span head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroTransformer {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub weights: Weights,
}

struct Handles {
    yes_no: NodeId,
    start: NodeId,
    end: NodeId,
    attention: Vec<Vec<NodeId>>,
    embedding_input: Option<NodeId>,
    override_inputs: BTreeMap<usize, Vec<NodeId>>,
    params: Vec<NodeId>,
}

impl MicroTransformer {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(ModelError::Config(format!(
                "vocab_size {} does not match vocabulary of {} words",
                config.vocab_size,
                vocab.len()
            )));
        }
        let weights = Weights::init(&config, seed);
        Ok(Self { config, vocab, weights })
    }

    pub fn encode(&self, instance: &Instance) -> Result<Encoded, ModelError> {
        self.vocab.encode(instance, self.config.max_seq)
    }

    fn build<'w>(
        &'w self,
        tape: &mut Tape<'w>,
        bindings: &mut Bindings<'w>,
        req: &Request<'_>,
    ) -> Result<Handles, ModelError> {
        let cfg = &self.config;
        let ids: &[TokenId] = &req.seq.ids;
        let n = ids.len();
        if n == 0 || n > cfg.max_seq {
            return Err(ModelError::Overflow { len: n, max_seq: cfg.max_seq });
        }
        let (d, h, dh) = (cfg.hidden, cfg.heads, cfg.head_dim());

        let named = self.weights.named();
        let mut params = Vec::with_capacity(named.len());
        for (_, t) in &named {
            let id = tape.input(t.shape(), req.param_grads);
            bindings.bind(id, t);
            params.push(id);
        }
        let mut next = 0usize;
        let mut take = || {
            let id = params[next];
            next += 1;
            id
        };
        let tok_table = take();
        let pos_table = take();

        let (tokens, embedding_input) = match req.embeddings {
            Some(e) => {
                if e.shape() != [n, d] {
                    return Err(ModelError::Config(format!(
                        "embedding input shape {:?}, expected [{n}, {d}]",
                        e.shape()
                    )));
                }
                let id = tape.input(&[n, d], true);
                bindings.bind_owned(id, e.clone());
                (id, Some(id))
            }
            None => (tape.gather(tok_table, ids)?, None),
        };
        let pos = tape.slice(pos_table, Axis::Rows, 0, n)?;
        let mut x = tape.add(tokens, pos)?;

        let keep: Arc<[bool]> = ids.iter().map(|&i| i != PAD).collect::<Vec<_>>().into();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        let mut attention = Vec::with_capacity(cfg.layers);
        let mut override_inputs = BTreeMap::new();

        for layer in 0..cfg.layers {
            let [ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2] =
                std::array::from_fn(|_| take());
            let xn = tape.layer_norm(x, ln1_g, ln1_b)?;
            let ov = req.overrides.and_then(|m| m.get(&layer));
            let (q, k) = if ov.is_none() {
                let q = tape.matmul(xn, wq)?;
                let q = tape.add(q, bq)?;
                let k = tape.matmul(xn, wk)?;
                (Some(q), Some(tape.add(k, bk)?))
            } else {
                (None, None)
            };
            let v = tape.matmul(xn, wv)?;
            let v = tape.add(v, bv)?;

            let mut head_outputs = Vec::with_capacity(h);
            let mut layer_attn = Vec::with_capacity(h);
            let mut layer_inputs = Vec::new();
            if let Some(t) = ov {
                if t.shape() != [h, n, n] {
                    return Err(ModelError::OverrideShape {
                        layer,
                        expected: vec![h, n, n],
                        got: t.shape().to_vec(),
                    });
                }
            }
            for head in 0..h {
                let cols = head * dh..(head + 1) * dh;
                let a = match ov {
                    Some(t) => {
                        let id = tape.input(&[n, n], true);
                        let block = t.data()[head * n * n..(head + 1) * n * n].to_vec();
                        bindings.bind_owned(id, Tensor::new(vec![n, n], block)?);
                        layer_inputs.push(id);
                        id
                    }
                    None => {
                        let qh = tape.slice(q.expect("computed"), Axis::Cols, cols.start, cols.end)?;
                        let kh = tape.slice(k.expect("computed"), Axis::Cols, cols.start, cols.end)?;
                        let scores = tape.matmul_bt(qh, kh)?;
                        let scores = tape.scale(scores, inv_sqrt);
                        tape.softmax(scores, Some(keep.clone()))?
                    }
                };
                layer_attn.push(a);
                let vh = tape.slice(v, Axis::Cols, cols.start, cols.end)?;
                head_outputs.push(tape.matmul(a, vh)?);
            }
            if ov.is_some() {
                override_inputs.insert(layer, layer_inputs);
            }
            attention.push(layer_attn);
            let merged = if h == 1 {
                head_outputs[0]
            } else {
                tape.concat(&head_outputs, Axis::Cols)?
            };
            let o = tape.matmul(merged, wo)?;
            let o = tape.add(o, bo)?;
            x = tape.add(x, o)?;

            let xn = tape.layer_norm(x, ln2_g, ln2_b)?;
            let f = tape.matmul(xn, w1)?;
            let f = tape.add(f, b1)?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, w2)?;
            let f = tape.add(f, b2)?;
            x = tape.add(x, f)?;
        }

        let [fg, fb, yn_w, yn_b, ws, we] = std::array::from_fn(|_| take());
        let hidden = tape.layer_norm(x, fg, fb)?;
        let cls = tape.slice(hidden, Axis::Rows, 0, 1)?;
        let yes_no = tape.matmul(cls, yn_w)?;
        let yes_no = tape.add(yes_no, yn_b)?;
        let start = tape.matmul_bt(ws, hidden)?;
        let end = tape.matmul_bt(we, hidden)?;
        let _ = d;

        Ok(Handles {
            yes_no,
            start,
            end,
            attention,
            embedding_input,
            override_inputs,
            params,
        })
    }

    /// Runs the encoder on `req.seq` (any length up to `max_seq`).
    pub fn evaluate(&self, req: &Request<'_>) -> Result<Outcome, ModelError> {
        let mut tape = Tape::new();
        let mut bindings = Bindings::new();
        let handles = self.build(&mut tape, &mut bindings, req)?;
        let n = req.seq.len();

        let objective_node = match &req.objective {
            Objective::None => None,
            Objective::Target(t) => Some(match *t {
                Target::YesNo(c) => tape.slice(handles.yes_no, Axis::Cols, c, c + 1)?,
                Target::Span { start, last } => {
                    let s = tape.slice(handles.start, Axis::Cols, start, start + 1)?;
                    let e = tape.slice(handles.end, Axis::Cols, last, last + 1)?;
                    tape.add(s, e)?
                }
            }),
            Objective::CrossEntropy(dist) => Some(match dist {
                AnswerDistribution::YesNo(p) => tape.cross_entropy(handles.yes_no, p, None)?,
                AnswerDistribution::Span { start, end } => {
                    let keep: Arc<[bool]> = context_keep(n, &req.seq.context).into();
                    let s = tape.cross_entropy(handles.start, start, Some(keep.clone()))?;
                    let e = tape.cross_entropy(handles.end, end, Some(keep))?;
                    tape.add(s, e)?
                }
            }),
        };
        if let Some(o) = objective_node {
            tape.set_output(o);
        } else {
            tape.set_output(handles.end);
        }
        tape.forward(bindings)?;

        let yn = tape.value(handles.yes_no)?.data();
        let logits = QaLogits {
            yes_no: [yn[0], yn[1]],
            start: tape.value(handles.start)?.data().to_vec(),
            end: tape.value(handles.end)?.data().to_vec(),
        };
        let h = self.config.heads;
        let mut layers = Vec::with_capacity(handles.attention.len());
        for heads in &handles.attention {
            let mut data = Vec::with_capacity(h * n * n);
            for &a in heads {
                data.extend_from_slice(tape.value(a)?.data());
            }
            layers.push(Tensor::new(vec![h, n, n], data)?);
        }

        let mut outcome = Outcome {
            logits,
            attention: AttentionStack { layers },
            objective: None,
            embedding_grad: None,
            override_grads: BTreeMap::new(),
            param_grads: None,
        };
        let Some(obj) = objective_node else {
            return Ok(outcome);
        };
        outcome.objective = Some(tape.value(obj)?.item());
        let wants_grad =
            req.param_grads || handles.embedding_input.is_some() || !handles.override_inputs.is_empty();
        if !wants_grad {
            return Ok(outcome);
        }
        let mut grads = tape.backward(&Tensor::scalar(1.0))?;
        if let Some(e) = handles.embedding_input {
            outcome.embedding_grad = grads.take(e);
        }
        for (layer, ids) in &handles.override_inputs {
            let mut data = Vec::with_capacity(h * n * n);
            for id in ids {
                data.extend(grads.take(*id).expect("marked").into_data());
            }
            outcome.override_grads.insert(*layer, Tensor::new(vec![h, n, n], data)?);
        }
        if req.param_grads {
            outcome.param_grads = Some(
                handles
                    .params
                    .iter()
                    .map(|id| grads.take(*id).expect("marked"))
                    .collect(),
            );
        }
        Ok(outcome)
    }

    /// Token embeddings `[len, hidden]` for a sequence.
    pub fn token_embeddings(&self, ids: &[TokenId]) -> Tensor {
        let d = self.config.hidden;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.weights.token_embedding.row_slice(i));
        }
        Tensor::new(vec![ids.len(), d], data).expect("shape")
    }

    /// Turns head outputs into the predicted answer for `head`.
    pub fn decide(&self, logits: &QaLogits, head: Head, context: &std::ops::Range<usize>) -> Prediction {
        match head {
            Head::YesNo => {
                let p = masked_softmax_row(&logits.yes_no, None);
                let class = usize::from(p[1] > p[0]);
                Prediction {
                    answer: Answer::YesNo(class == 1),
                    confidence: p[class],
                    logits: logits.clone(),
                    target: Target::YesNo(class),
                }
            }
            Head::Span => {
                let mut best = (f64::NEG_INFINITY, context.start, context.start);
                for s in context.clone() {
                    for e in s..(s + MAX_ANSWER_LEN).min(context.end) {
                        let score = logits.start[s] + logits.end[e];
                        if score > best.0 {
                            best = (score, s, e);
                        }
                    }
                }
                let (_, s, e) = best;
                let target = Target::Span { start: s, last: e };
                Prediction {
                    answer: Answer::Span {
                        start: s - context.start,
                        end: e + 1 - context.start,
                    },
                    confidence: logits.target_probability(target, context),
                    logits: logits.clone(),
                    target,
                }
            }
        }
    }

    /// Prediction on an already encoded sequence (PAD positions are masked).
    pub fn predict_encoded(&self, seq: &Encoded, head: Head) -> Result<Prediction, ModelError> {
        let out = self.evaluate(&Request::new(seq))?;
        Ok(self.decide(&out.logits, head, &seq.context))
    }

    /// Encodes, drops trailing PAD and runs the QA head selected by the instance's answer type.
    pub fn forward_qa(&self, instance: &Instance) -> Result<(Prediction, AttentionStack), ModelError> {
        let seq = self.encode(instance)?.trimmed();
        let out = self.evaluate(&Request::new(&seq))?;
        Ok((self.decide(&out.logits, instance.head(), &seq.context), out.attention))
    }

    /// Prediction with the post-softmax attention of the listed layers replaced.
    ///
    /// Overrides are `[heads, len, len]` over the trimmed encoding and are not
    /// renormalized. Layers without an override compute attention from their
    /// (possibly intervened) inputs.
    pub fn forward_with_override(
        &self,
        instance: &Instance,
        overrides: &BTreeMap<usize, Tensor>,
    ) -> Result<Prediction, ModelError> {
        let seq = self.encode(instance)?.trimmed();
        self.check_overrides(overrides)?;
        let mut req = Request::new(&seq);
        req.overrides = Some(overrides);
        let out = self.evaluate(&req)?;
        Ok(self.decide(&out.logits, instance.head(), &seq.context))
    }

    pub(crate) fn check_overrides(&self, overrides: &BTreeMap<usize, Tensor>) -> Result<(), ModelError> {
        if let Some(&layer) = overrides.keys().find(|&&l| l >= self.config.layers) {
            return Err(ModelError::Config(format!(
                "override for layer {layer} but the model has {} layers",
                self.config.layers
            )));
        }
        Ok(())
    }

    pub fn predict(&self, instance: &Instance) -> Result<Prediction, ModelError> {
        Ok(self.forward_qa(instance)?.0)
    }

    /// Probability of the predicted answer.
    pub fn predict_confidence(&self, instance: &Instance) -> Result<f64, ModelError> {
        Ok(self.predict(instance)?.confidence)
    }
}
