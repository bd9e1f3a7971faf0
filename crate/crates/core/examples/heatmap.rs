//! Renders token and pairwise attribution maps as SVG files in the temp dir.

use attrsim::attribution::{intgrad_tokens, latattr_pairs, IntegrationConfig};
use attrsim::counterfactuals::gen_comparison;
use attrsim::experiment::{render_heatmap, token_labels};
use attrsim::model::{MicroTransformer, ModelConfig, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::synthetic();
    let config = ModelConfig {
        layers: 2,
        heads: 2,
        hidden: 16,
        max_seq: 64,
        ffn: 32,
        vocab_size: vocab.len(),
    };
    let model = MicroTransformer::new(config, vocab, 1)?;
    let inst = &gen_comparison(2, 1)[0];
    let labels = token_labels(inst, model.config.max_seq)?;
    let cfg = IntegrationConfig::with_steps(16);
    for map in [intgrad_tokens(&model, inst, &cfg)?, latattr_pairs(&model, inst, &cfg)?] {
        let path = std::env::temp_dir().join(format!("{}-{}.svg", inst.id, map.method));
        std::fs::write(&path, render_heatmap(&map, &labels))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
