//! A scaled-down end-to-end experiment: data, proper and shortcut models,
//! neighborhoods, attributions and the simulation report.
//!
//! The full-size version is `attrsim run cfg/yesno.json`.

use attrsim::experiment::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("attrsim-example");
    let text = format!(
        r#"{{
  "setting": "yes-no",
  "seed": 2,
  "dataset": {{ "seed": 2, "train_count": 2000, "eval_count": 15 }},
  "model": {{ "layers": 2, "heads": 4, "hidden": 32, "max_seq": 64, "ffn": 64 }},
  "training": {{ "learning_rate": 0.003, "batch_size": 16, "max_epochs": 12 }},
  "variants": ["proper", "shortcut"],
  "methods": [
    {{ "method": "lime", "samples": 300 }},
    {{ "method": "intgrad", "steps": 16 }},
    {{ "method": "archip" }},
    {{ "method": "latattr", "steps": 16 }}
  ],
  "output_dir": {:?}
}}"#,
        out.display().to_string()
    );
    let cfg = ExperimentConfig::parse(&text)?;
    let report = run_experiment(&cfg)?;
    println!("{} neighborhoods, positive rate {:.2}", report.neighborhoods, report.positive_rate);
    for row in &report.rows {
        let auc = row.s_auc.map_or("n/a".to_owned(), |a| format!("{a:.3}"));
        println!("{:<9} S-ACC {:.3}  S-AUC {auc}", row.method, row.s_acc);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
