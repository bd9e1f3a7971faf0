use std::collections::BTreeMap;

use super::*;
use crate::counterfactuals::{gen_bridge, gen_comparison};
use crate::grad::Tensor;

fn tiny(layers: usize, seed: u64) -> MicroTransformer {
    let vocab = Vocabulary::synthetic();
    let cfg = ModelConfig {
        layers,
        heads: 2,
        hidden: 8,
        max_seq: 64,
        ffn: 12,
        vocab_size: vocab.len(),
    };
    MicroTransformer::new(cfg, vocab, seed).unwrap()
}

// Plain nested-loop reimplementation of the encoder.
fn reference_logits(m: &MicroTransformer, ids: &[usize]) -> QaLogits {
    let w = &m.weights;
    let cfg = m.config;
    let (n, d, h) = (ids.len(), cfg.hidden, cfg.heads);
    let dh = d / h;
    let lin = |x: &[Vec<f64>], wt: &Tensor, b: Option<&Tensor>| -> Vec<Vec<f64>> {
        let (k, out) = (wt.rows(), wt.cols());
        x.iter()
            .map(|row| {
                (0..out)
                    .map(|j| {
                        let mut s = b.map_or(0.0, |b| b.data()[j]);
                        for i in 0..k {
                            s += row[i] * wt.at(i, j);
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    };
    let ln = |x: &[Vec<f64>], g: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let mu = row.iter().sum::<f64>() / row.len() as f64;
                let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / row.len() as f64;
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mu) / (var + 1e-5).sqrt() * g.data()[j] + b.data()[j])
                    .collect()
            })
            .collect()
    };
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| w.token_embedding.at(ids[i], j) + w.position_embedding.at(i, j))
                .collect()
        })
        .collect();
    for lw in &w.layers {
        let xn = ln(&x, &lw.ln1_gain, &lw.ln1_bias);
        let q = lin(&xn, &lw.query, Some(&lw.query_bias));
        let k = lin(&xn, &lw.key, Some(&lw.key_bias));
        let v = lin(&xn, &lw.value, Some(&lw.value_bias));
        let mut merged = vec![vec![0.0; d]; n];
        for head in 0..h {
            for i in 0..n {
                let mut scores: Vec<f64> = (0..n)
                    .map(|j| {
                        let dot: f64 = (0..dh).map(|c| q[i][head * dh + c] * k[j][head * dh + c]).sum();
                        dot / (dh as f64).sqrt()
                    })
                    .collect();
                let mx = (0..n).filter(|&j| ids[j] != PAD).map(|j| scores[j]).fold(f64::MIN, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    scores[j] = if ids[j] == PAD { 0.0 } else { (scores[j] - mx).exp() };
                    z += scores[j];
                }
                for c in 0..dh {
                    merged[i][head * dh + c] = (0..n).map(|j| scores[j] / z * v[j][head * dh + c]).sum();
                }
            }
        }
        let o = lin(&merged, &lw.output, Some(&lw.output_bias));
        for i in 0..n {
            for j in 0..d {
                x[i][j] += o[i][j];
            }
        }
        let xn = ln(&x, &lw.ln2_gain, &lw.ln2_bias);
        let f: Vec<Vec<f64>> = lin(&xn, &lw.ffn_in, Some(&lw.ffn_in_bias))
            .into_iter()
            .map(|r| r.into_iter().map(gelu).collect())
            .collect();
        let f = lin(&f, &lw.ffn_out, Some(&lw.ffn_out_bias));
        for i in 0..n {
            for j in 0..d {
                x[i][j] += f[i][j];
            }
        }
    }
    let hid = ln(&x, &w.final_gain, &w.final_bias);
    let yn = lin(&hid[..1], &w.yes_no, Some(&w.yes_no_bias));
    let dot = |a: &Tensor, r: &[f64]| a.data().iter().zip(r).map(|(x, y)| x * y).sum::<f64>();
    QaLogits {
        yes_no: [yn[0][0], yn[0][1]],
        start: hid.iter().map(|r| dot(&w.span_start, r)).collect(),
        end: hid.iter().map(|r| dot(&w.span_end, r)).collect(),
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn forward_matches_reference_loops() {
    let m = tiny(2, 5);
    for inst in gen_bridge(3, 3).iter().chain(&gen_comparison(3, 3)) {
        let seq = m.encode(inst).unwrap();
        let got = m.evaluate(&Request::new(&seq)).unwrap().logits;
        let want = reference_logits(&m, &seq.ids);
        assert!((got.yes_no[0] - want.yes_no[0]).abs() < 1e-10);
        assert!((got.yes_no[1] - want.yes_no[1]).abs() < 1e-10);
        assert!(close(&got.start, &want.start, 1e-10));
        assert!(close(&got.end, &want.end, 1e-10));
    }
}

#[test]
fn trailing_pad_does_not_change_content_logits() {
    let m = tiny(2, 1);
    let inst = &gen_comparison(0, 1)[0];
    let full = m.encode(inst).unwrap();
    let trimmed = full.trimmed();
    let a = m.evaluate(&Request::new(&full)).unwrap().logits;
    let b = m.evaluate(&Request::new(&trimmed)).unwrap().logits;
    let n = trimmed.len();
    assert!(close(&a.yes_no, &b.yes_no, 1e-12));
    assert!(close(&a.start[..n], &b.start, 1e-12));
}

#[test]
fn natural_attention_override_is_identity() {
    let m = tiny(3, 2);
    for inst in gen_comparison(8, 5).iter().chain(&gen_bridge(8, 5)) {
        let (pred, attn) = m.forward_qa(inst).unwrap();
        let all: BTreeMap<usize, Tensor> = attn.layers.iter().cloned().enumerate().collect();
        let over = m.forward_with_override(inst, &all).unwrap();
        assert_eq!(over.answer, pred.answer);
        assert!(close(&over.logits.start, &pred.logits.start, 1e-9));
        assert!(close(&over.logits.yes_no, &pred.logits.yes_no, 1e-9));
    }
}

#[test]
fn attention_rows_sum_to_one_and_scale_with_alpha() {
    let m = tiny(2, 0);
    let (_, attn) = m.forward_qa(&gen_comparison(1, 1)[0]).unwrap();
    let half = attn.scaled(0.5);
    for t in &half.layers {
        let n = t.shape()[1];
        for row in t.data().chunks(n) {
            assert!((row.iter().sum::<f64>() - 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn override_shape_is_checked() {
    let m = tiny(2, 0);
    let inst = &gen_comparison(1, 1)[0];
    let mut bad = BTreeMap::new();
    bad.insert(0, Tensor::zeros(&[2, 3, 3]));
    assert!(matches!(
        m.forward_with_override(inst, &bad),
        Err(ModelError::OverrideShape { layer: 0, .. })
    ));
    let mut out_of_range = BTreeMap::new();
    out_of_range.insert(7, Tensor::zeros(&[2, 3, 3]));
    assert!(matches!(m.forward_with_override(inst, &out_of_range), Err(ModelError::Config(_))));
}

#[test]
fn zero_attention_removes_value_mixing() {
    // With one layer and all-zero attention, every position only sees its own token.
    let m = tiny(1, 4);
    let inst = &gen_comparison(2, 1)[0];
    let (_, attn) = m.forward_qa(inst).unwrap();
    let zero: BTreeMap<usize, Tensor> = [(0, attn.layers[0].scaled(0.0))].into();
    let a = m.forward_with_override(inst, &zero).unwrap();
    let mut other = inst.clone();
    let last = other.context.len() - 2;
    other.context[last] = if other.context[last] == "paris" { "rome".into() } else { "paris".into() };
    let b = m.forward_with_override(&other, &zero).unwrap();
    assert_eq!(a.logits.yes_no, b.logits.yes_no);
}

#[test]
fn target_gradient_matches_finite_differences() {
    let m = tiny(1, 9);
    let inst = &gen_bridge(1, 1)[0];
    let seq = m.encode(inst).unwrap().trimmed();
    let pred = m.predict(inst).unwrap();
    let emb = m.token_embeddings(&seq.ids);
    let d = m.config.hidden;
    let f = |e: &Tensor| {
        let mut r = Request::new(&seq);
        r.embeddings = Some(e);
        r.objective = Objective::Target(pred.target);
        m.evaluate(&r).unwrap()
    };
    let out = f(&emb);
    let g = out.embedding_grad.unwrap();
    let step = 1e-5;
    for idx in [0, 3, d + 1, 5 * d + 7, emb.len() - 1] {
        let mut plus = emb.clone();
        plus.data_mut()[idx] += step;
        let mut minus = emb.clone();
        minus.data_mut()[idx] -= step;
        let fd = (f(&plus).objective.unwrap() - f(&minus).objective.unwrap()) / (2.0 * step);
        let got = g.data()[idx];
        assert!((fd - got).abs() / fd.abs().max(got.abs()).max(1e-8) < 1e-5, "{idx}: {fd} vs {got}");
    }
}

#[test]
fn cross_entropy_parameter_gradient_passes_grad_check() {
    let m = tiny(1, 3);
    let inst = &gen_comparison(5, 1)[0];
    let seq = m.encode(inst).unwrap().trimmed();
    let gold = AnswerDistribution::gold(&inst.answer, &seq);
    let mut req = Request::new(&seq);
    req.objective = Objective::CrossEntropy(gold.clone());
    req.param_grads = true;
    let out = m.evaluate(&req).unwrap();
    let grads = out.param_grads.unwrap();
    let names: Vec<String> = m.weights.named().into_iter().map(|(n, _)| n).collect();
    let idx = names.iter().position(|n| n == "yes_no").unwrap();
    let base = m.weights.yes_no.clone();
    let eval = |w: &Tensor| {
        let mut mm = m.clone();
        mm.weights.yes_no = w.clone();
        mm.evaluate(&req).unwrap().objective.unwrap()
    };
    for k in 0..base.len() {
        let mut p = base.clone();
        p.data_mut()[k] += 1e-5;
        let mut q = base.clone();
        q.data_mut()[k] -= 1e-5;
        let fd = (eval(&p) - eval(&q)) / 2e-5;
        let got = grads[idx].data()[k];
        assert!((fd - got).abs() / fd.abs().max(got.abs()).max(1e-8) < 1e-4, "{k}: {fd} vs {got}");
    }
}

#[test]
fn untrained_yes_no_confidence_is_near_half() {
    let insts = gen_comparison(11, 100);
    let mut total = 0.0;
    for (seed, inst) in insts.iter().enumerate() {
        let m = tiny(2, seed as u64);
        total += m.predict_confidence(inst).unwrap();
    }
    let mean = total / 100.0;
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
}

#[test]
fn zero_epochs_leave_weights_untouched() {
    let mut m = tiny(1, 0);
    let before = m.clone();
    let data = gen_comparison(0, 8);
    let cfg = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let metrics = train(&mut m, &data, &cfg).unwrap();
    assert_eq!(metrics.epochs_run, 0);
    assert_eq!(m, before);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let data = gen_comparison(0, 64);
    let cfg = TrainConfig {
        max_epochs: 4,
        learning_rate: 3e-3,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut a = tiny(1, 0);
    let mut b = tiny(1, 0);
    let ma = train(&mut a, &data, &cfg).unwrap();
    let mb = train(&mut b, &data, &cfg).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(a, b);
    assert!(ma.history.last().unwrap().mean_loss < ma.history[0].mean_loss);
}

#[test]
fn empty_dataset_is_rejected() {
    let mut m = tiny(1, 0);
    assert_eq!(train(&mut m, &[], &TrainConfig::default()), Err(ModelError::EmptyDataset));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = tiny(2, 6);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&Checkpoint::from_model(&m), &path).unwrap();
    let back = load_checkpoint(&path).unwrap().into_model().unwrap();
    assert_eq!(back, m);
    let inst = &gen_bridge(0, 1)[0];
    assert_eq!(back.predict(inst).unwrap(), m.predict(inst).unwrap());
}

#[test]
fn checkpoint_with_wrong_tensor_is_rejected() {
    let m = tiny(1, 0);
    let mut ck = Checkpoint::from_model(&m);
    ck.params[3].shape = vec![1, 1];
    assert!(matches!(ck.into_model(), Err(ModelError::Checkpoint(_))));
}

#[test]
fn invalid_config_is_rejected() {
    let vocab = Vocabulary::synthetic();
    let cfg = ModelConfig {
        hidden: 10,
        heads: 4,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    assert!(matches!(MicroTransformer::new(cfg, vocab, 0), Err(ModelError::Config(_))));
}
