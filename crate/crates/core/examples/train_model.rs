//! Trains a micro-transformer on synthetic comparison questions, then
//! saves and reloads it.
//!
//! cargo run --example train_model -- [train_count] [epochs]

use attrsim::counterfactuals::gen_comparison;
use attrsim::model::{
    accuracy, load_checkpoint, save_checkpoint, train, Checkpoint, MicroTransformer, ModelConfig, TrainConfig,
    Vocabulary,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().map_or(Ok(2000), |a| a.parse())?;
    let epochs: usize = args.next().map_or(Ok(12), |a| a.parse())?;

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
    let data = gen_comparison(1, count);
    let held_out = gen_comparison(2, 200);
    println!("held-out accuracy before training: {:.3}", accuracy(&model, &held_out)?);

    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 16,
        max_epochs: epochs,
        ..TrainConfig::default()
    };
    let metrics = train(&mut model, &data, &cfg)?;
    for e in &metrics.history {
        println!("epoch {:>2}  loss {:.4}  running acc {:.3}", e.epoch, e.mean_loss, e.running_accuracy);
    }
    println!("train accuracy {:.3}", metrics.train_accuracy);
    println!("held-out accuracy {:.3}", accuracy(&model, &held_out)?);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.json");
    save_checkpoint(&Checkpoint::from_model(&model), &path)?;
    let reloaded = load_checkpoint(&path)?.into_model()?;
    println!("reloaded model identical: {}", reloaded == model);
    Ok(())
}

