//! Per-example differentiable masking on a briefly trained comparison model.

use attrsim::attribution::{diffmask_per_example, DiffMaskConfig};
use attrsim::counterfactuals::gen_comparison;
use attrsim::model::{train, Answer, MicroTransformer, ModelConfig, TrainConfig, Vocabulary};

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
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: 12,
        ..TrainConfig::default()
    };
    train(&mut model, &gen_comparison(1, 2000), &cfg)?;

    // A "no" example: with every word masked the model falls back to "yes",
    // so the gates have something to protect.
    let pool = gen_comparison(9, 20);
    let inst = pool
        .iter()
        .find(|i| matches!(model.predict(i), Ok(p) if p.answer == Answer::YesNo(false)))
        .ok_or("no negative prediction in the pool")?;
    let seq = model.encode(inst)?;
    for sparsity in [0.0, 0.05, 0.5] {
        let map = diffmask_per_example(&model, inst, &DiffMaskConfig { sparsity, ..DiffMaskConfig::default() })?;
        let open = seq.word_positions().iter().filter(|&&p| map.token(p) > 0.5).count();
        println!("sparsity {sparsity:<4}: {open} of {} gates open", seq.word_positions().len());
    }
    let map = diffmask_per_example(&model, inst, &DiffMaskConfig::default())?;
    let words = model.vocab.decode(&seq.ids);
    for p in seq.word_positions() {
        println!("{:>10} {:.3}", words[p], map.token(p));
    }
    Ok(())
}
