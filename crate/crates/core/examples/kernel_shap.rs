//! KernelSHAP: exact enumeration on small games, complementary sampling on a
//! larger additive one.

use attrsim::attribution::{kernel_shap, SurrogateConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exact = SurrogateConfig::default();
    let and = kernel_shap(2, &exact, |k| Ok(f64::from(u8::from(k[0] && k[1]))))?;
    println!("AND game: phi = {:?}", and.coefficients);

    // majority of three
    let maj = kernel_shap(3, &exact, |k| Ok(f64::from(u8::from(k.iter().filter(|&&b| b).count() >= 2))))?;
    println!("majority game: phi = {:?}", maj.coefficients);

    let weights: Vec<f64> = (0..20).map(|i| (i as f64 - 10.0) / 10.0).collect();
    let sampled = SurrogateConfig {
        samples: Some(800),
        seed: 3,
        ..SurrogateConfig::default()
    };
    let fit = kernel_shap(20, &sampled, |k| {
        Ok(k.iter().zip(&weights).filter(|(b, _)| **b).map(|(_, w)| w).sum())
    })?;
    let worst = fit
        .coefficients
        .iter()
        .zip(&weights)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    println!("sampled additive game with 20 features: max |phi - w| = {worst:.2e}");
    Ok(())
}
