//! Counterfactual neighborhoods for each setting, labeled by an untrained model.

use attrsim::counterfactuals::{
    build_neighborhood, gen_bridge, gen_comparison, gen_distractor, label_neighborhood, Setting,
};
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
    let model = MicroTransformer::new(config, vocab, 0)?;
    let bases = [
        (Setting::YesNo, gen_comparison(1, 1).remove(0)),
        (Setting::Bridge, gen_bridge(1, 1).remove(0)),
        (Setting::Distractor, gen_distractor(1, 1).remove(0)),
    ];
    for (setting, base) in bases {
        let mut nb = build_neighborhood(&base, setting, 0)?;
        let z = label_neighborhood(&model, &mut nb)?;
        println!("== {} ({} members), z = {z}", setting.name(), nb.size());
        println!("   hypothesis: {}", setting.hypothesis());
        for (inst, answer) in nb.members().zip(&nb.predictions) {
            println!("   {} | {} -> {answer:?}", inst.question.join(" "), inst.context.join(" "));
        }
        println!("   target positions {:?}", nb.target_tokens);
    }
    Ok(())
}
