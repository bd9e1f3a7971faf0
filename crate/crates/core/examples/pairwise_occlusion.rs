//! Pairwise occlusion: keep only two words, mask the rest, read the target logit.

use attrsim::attribution::{default_candidate_pairs, occlusion_pairs};
use attrsim::counterfactuals::gen_distractor;
use attrsim::model::{MicroTransformer, ModelConfig, Vocabulary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = Vocabulary::synthetic();
    let config = ModelConfig {
        layers: 1,
        heads: 2,
        hidden: 16,
        max_seq: 64,
        ffn: 32,
        vocab_size: vocab.len(),
    };
    let model = MicroTransformer::new(config, vocab, 2)?;
    let inst = &gen_distractor(3, 1)[0];
    let pairs = default_candidate_pairs(inst);
    let map = occlusion_pairs(&model, inst, &pairs)?;
    let words = model.vocab.decode(&model.encode(inst)?.ids);
    println!("{}", inst.question.join(" "));
    for (i, j) in pairs {
        println!("{:>8} x {:<8} {:+.4}", words[i], words[j], map.pair(i, j));
    }
    Ok(())
}
