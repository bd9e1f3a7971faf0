//! Integrated gradients: exact on a linear function, and the completeness gap
//! on an untrained transformer as the step count grows.

use attrsim::attribution::{integrated_gradients, intgrad_tokens_detailed, IntegrationConfig};
use attrsim::counterfactuals::gen_comparison;
use attrsim::grad::Tensor;
use attrsim::model::{MicroTransformer, ModelConfig, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // f(x) = w · x, so attributions are w_i (x_i - b_i) for any step count
    let w = [0.5, -2.0, 1.0];
    let x = Tensor::row(&[1.0, 1.0, 3.0]);
    let b = Tensor::row(&[0.0; 3]);
    let attr = integrated_gradients(&x, &b, &IntegrationConfig::with_steps(3), |_| Ok(Tensor::row(&w)))?;
    println!("linear probe attributions: {:?}", attr.data());

    let vocab = Vocabulary::synthetic();
    let config = ModelConfig {
        layers: 2,
        heads: 4,
        hidden: 32,
        max_seq: 64,
        ffn: 64,
        vocab_size: vocab.len(),
    };
    let model = MicroTransformer::new(config, vocab, 3)?;
    let inst = &gen_comparison(4, 1)[0];
    println!("question: {}", inst.question.join(" "));
    println!("context:  {}", inst.context.join(" "));
    for steps in [4, 8, 16, 32, 64] {
        let ig = intgrad_tokens_detailed(&model, inst, &IntegrationConfig::with_steps(steps))?;
        println!(
            "m = {steps:>2}: F(x) - F(b) = {:+.5}, completeness gap {:.2e}",
            ig.value - ig.baseline_value,
            ig.completeness_gap()
        );
    }
    Ok(())
}
