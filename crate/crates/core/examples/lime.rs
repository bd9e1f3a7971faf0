//! LIME on a known additive function, then on a transformer's tokens.

use attrsim::attribution::{lime, lime_tokens, SurrogateConfig};
use attrsim::counterfactuals::gen_comparison;
use attrsim::model::{MicroTransformer, ModelConfig, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SurrogateConfig {
        seed: 1,
        ..SurrogateConfig::default()
    };
    // features 1 and 4 carry weights 2 and -1
    let fit = lime(6, &cfg, |keep| {
        Ok(2.0 * f64::from(u8::from(keep[1])) - f64::from(u8::from(keep[4])))
    })?;
    let coef: Vec<String> = fit.coefficients.iter().map(|c| format!("{c:+.3}")).collect();
    println!("recovered coefficients: [{}], intercept {:.3}", coef.join(", "), fit.intercept);

    let vocab = Vocabulary::synthetic();
    let config = ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 16,
        max_seq: 64,
        ffn: 32,
        vocab_size: vocab.len(),
    };
    let model = MicroTransformer::new(config, vocab, 7)?;
    let inst = &gen_comparison(5, 1)[0];
    let map = lime_tokens(&model, inst, &SurrogateConfig { samples: Some(300), ..cfg })?;
    let words: Vec<&String> = inst.question.iter().chain(&inst.context).collect();
    let seq = model.encode(inst)?;
    for (w, p) in words.iter().zip(seq.word_positions()) {
        println!("{w:>10} {:+.4}", map.token(p));
    }
    Ok(())
}
