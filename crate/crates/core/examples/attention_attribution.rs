//! AtAttr and LAtAttr pair maps, with a per-layer completeness check.

use std::collections::BTreeMap;

use attrsim::attribution::{attention_layer_attributions, latattr_pairs, override_value, IntegrationConfig};
use attrsim::counterfactuals::gen_comparison;
use attrsim::grad::Tensor;
use attrsim::model::{train, MicroTransformer, ModelConfig, TrainConfig, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::synthetic();
    let config = ModelConfig {
        layers: 2,
        heads: 4,
        hidden: 32,
        max_seq: 64,
        ffn: 64,
        vocab_size: vocab.len(),
    };
    let mut model = MicroTransformer::new(config, vocab, 0)?;
    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 12,
        ..TrainConfig::default()
    };
    train(&mut model, &gen_comparison(1, 2000), &tc)?;
    let inst = &gen_comparison(12, 1)[0];
    let cfg = IntegrationConfig::with_steps(64);

    let raw = attention_layer_attributions(&model, inst, &cfg, true)?;
    let full = override_value(&model, &raw.seq, raw.target, &BTreeMap::new())?;
    for l in 0..raw.layers.len() {
        let zero: BTreeMap<usize, Tensor> = [(l, raw.natural.layers[l].scaled(0.0))].into();
        let base = override_value(&model, &raw.seq, raw.target, &zero)?;
        println!(
            "layer {l}: sum of attributions {:+.5}, F(A) - F(0) {:+.5}",
            raw.layer_total(l),
            full - base
        );
    }

    let map = latattr_pairs(&model, inst, &cfg)?;
    let words = model.vocab.decode(&raw.seq.ids);
    let n = raw.seq.len();
    let mut cells: Vec<(f64, usize, usize)> =
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (map.pair(i, j), i, j)).collect();
    cells.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
    println!("strongest pairs:");
    for (s, i, j) in cells.into_iter().take(8) {
        println!("  {:>10} -> {:<10} {s:+.4}", words[i], words[j]);
    }
    Ok(())
}
