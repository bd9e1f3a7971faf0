//! Threshold simulation of behavioral labels from a scalar factor.

use attrsim::simulation::simulate;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases: [(&str, Vec<(f64, u8)>); 3] = [
        ("separable", vec![(0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0)]),
        ("interleaved", vec![(0.9, 1), (0.8, 0), (0.2, 0), (0.1, 1)]),
        ("single class", vec![(0.3, 0), (0.7, 0)]),
    ];
    for (name, pairs) in cases {
        let s = simulate(&pairs)?;
        let auc = s.s_auc.map_or("undefined".to_owned(), |a| format!("{a:.3}"));
        println!("{name:<12} S-ACC {:.3}  S-AUC {auc}  threshold {:.3}", s.s_acc, s.threshold);
    }
    Ok(())
}
