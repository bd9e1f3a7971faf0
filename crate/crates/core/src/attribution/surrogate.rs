use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{prepare, token_map, AttributionError, AttributionMap, Method, SurrogateConfig};
use crate::model::{Instance, MicroTransformer, Request};

const LIME_SAMPLES: usize = 1000;
const SHAP_SAMPLES: usize = 2000;
const MAX_CONDITION: f64 = 1e12;

/// Coefficients of a fitted surrogate; `present[i] = true` means feature `i` is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub ridge_used: bool,
}

/// Solves `(XᵀWX + λD) β = XᵀWy`, adding the ridge only when the system is
/// singular or badly conditioned. `penalize_first = false` leaves an
/// intercept column unpenalized.
fn weighted_least_squares(
    rows: &[Vec<f64>],
    weights: &[f64],
    y: &[f64],
    ridge: f64,
    penalize_first: bool,
) -> (Vec<f64>, bool) {
    let p = rows[0].len();
    let mut xtwx = DMatrix::<f64>::zeros(p, p);
    let mut xtwy = DVector::<f64>::zeros(p);
    for ((row, &w), &t) in rows.iter().zip(weights).zip(y) {
        for a in 0..p {
            if row[a] == 0.0 {
                continue;
            }
            let wa = w * row[a];
            xtwy[a] += wa * t;
            for b in 0..p {
                xtwx[(a, b)] += wa * row[b];
            }
        }
    }
    let sv = xtwx.clone().svd(false, false).singular_values;
    let (max, min) = (sv.max(), sv.min());
    let well_posed = min > 0.0 && max / min < MAX_CONDITION;
    if well_posed {
        if let Some(ch) = xtwx.clone().cholesky() {
            return (ch.solve(&xtwy).iter().copied().collect(), false);
        }
    }
    let lambda = ridge.max(f64::EPSILON) * max.max(1.0);
    let start = usize::from(!penalize_first);
    for a in start..p {
        xtwx[(a, a)] += lambda;
    }
    let solved = xtwx
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&xtwy))
        .or_else(|| xtwx.lu().solve(&xtwy))
        .unwrap_or_else(|| DVector::zeros(p));
    (solved.iter().copied().collect(), true)
}

/// LIME: weighted linear fit from keep-indicators to `f`.
pub fn lime<F>(features: usize, cfg: &SurrogateConfig, mut f: F) -> Result<SurrogateFit, AttributionError>
where
    F: FnMut(&[bool]) -> Result<f64, AttributionError>,
{
    if features == 0 {
        return Err(AttributionError::NothingToMask("lime".into()));
    }
    let samples = cfg.samples.unwrap_or(LIME_SAMPLES);
    if samples < features + 1 {
        return Err(AttributionError::TooFewSamples {
            method: "lime",
            samples,
            features,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(samples);
    let mut weights = Vec::with_capacity(samples);
    let mut y = Vec::with_capacity(samples);
    for s in 0..samples {
        let keep: Vec<bool> = if s == 0 {
            vec![true; features]
        } else {
            (0..features).map(|_| rng.random_bool(0.5)).collect()
        };
        let masked = keep.iter().filter(|k| !**k).count() as f64 / features as f64;
        weights.push((-(masked * masked) / (cfg.kernel_width * cfg.kernel_width)).exp());
        y.push(f(&keep)?);
        rows.push(std::iter::once(1.0).chain(keep.iter().map(|&k| f64::from(u8::from(k)))).collect());
    }
    let (beta, ridge_used) = weighted_least_squares(&rows, &weights, &y, cfg.ridge, false);
    Ok(SurrogateFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        ridge_used,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// KernelSHAP with the efficiency constraint `Σφ = f(all) − f(none)` built in.
///
/// Up to `cfg.exact_limit` features every coalition is enumerated, which
/// recovers the Shapley values exactly; beyond that coalitions are sampled
/// from the Shapley kernel in complementary pairs.
pub fn kernel_shap<F>(features: usize, cfg: &SurrogateConfig, mut f: F) -> Result<SurrogateFit, AttributionError>
where
    F: FnMut(&[bool]) -> Result<f64, AttributionError>,
{
    let n = features;
    if n == 0 {
        return Err(AttributionError::NothingToMask("kernelshap".into()));
    }
    let empty = f(&vec![false; n])?;
    let full = f(&vec![true; n])?;
    let delta = full - empty;
    if n == 1 {
        return Ok(SurrogateFit {
            coefficients: vec![delta],
            intercept: empty,
            ridge_used: false,
        });
    }

    let mut coalitions: Vec<(Vec<bool>, f64)> = Vec::new();
    if n <= cfg.exact_limit {
        for bits in 1u64..(1 << n) - 1 {
            let keep: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
            let s = bits.count_ones() as usize;
            let w = (n - 1) as f64 / (binomial(n, s) * s as f64 * (n - s) as f64);
            coalitions.push((keep, w));
        }
    } else {
        let samples = cfg.samples.unwrap_or(SHAP_SAMPLES);
        if samples < n + 1 {
            return Err(AttributionError::TooFewSamples {
                method: "kernelshap",
                samples,
                features: n,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let size_weights: Vec<f64> = (1..n).map(|s| 1.0 / (s * (n - s)) as f64).collect();
        let total: f64 = size_weights.iter().sum();
        while coalitions.len() < samples {
            let mut u = rng.random::<f64>() * total;
            let mut s = n - 1;
            for (k, w) in size_weights.iter().enumerate() {
                if u < *w {
                    s = k + 1;
                    break;
                }
                u -= w;
            }
            let mut keep = vec![false; n];
            for i in sample(&mut rng, n, s) {
                keep[i] = true;
            }
            let complement: Vec<bool> = keep.iter().map(|k| !k).collect();
            coalitions.push((keep, 1.0));
            coalitions.push((complement, 1.0));
        }
    }

    // Eliminate the last feature: φ_n = Δ − Σ_{i<n} φ_i.
    let last = n - 1;
    let mut rows = Vec::with_capacity(coalitions.len());
    let mut weights = Vec::with_capacity(coalitions.len());
    let mut y = Vec::with_capacity(coalitions.len());
    for (keep, w) in &coalitions {
        let z_last = f64::from(u8::from(keep[last]));
        rows.push((0..last).map(|i| f64::from(u8::from(keep[i])) - z_last).collect::<Vec<_>>());
        weights.push(*w);
        y.push(f(keep)? - empty - z_last * delta);
    }
    let (mut phi, ridge_used) = weighted_least_squares(&rows, &weights, &y, cfg.ridge, true);
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Ok(SurrogateFit {
        coefficients: phi,
        intercept: empty,
        ridge_used,
    })
}

type MaskedProbability<'a> = Box<dyn FnMut(&[bool]) -> Result<f64, AttributionError> + 'a>;

fn masked_probability<'a>(
    model: &'a MicroTransformer,
    prepared: &'a super::Prepared,
    positions: &'a [usize],
    mask_token: usize,
) -> MaskedProbability<'a> {
    let target = prepared.prediction.target;
    Box::new(move |keep: &[bool]| {
        let mut seq = prepared.seq.clone();
        for (&p, &k) in positions.iter().zip(keep) {
            if !k {
                seq.ids[p] = mask_token;
            }
        }
        let out = model.evaluate(&Request::new(&seq))?;
        Ok(out.logits.target_probability(target, &seq.context))
    })
}

fn surrogate_tokens(
    method: Method,
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &SurrogateConfig,
) -> Result<AttributionMap, AttributionError> {
    let prepared = prepare(model, instance)?;
    let positions = prepared.seq.word_positions();
    if positions.is_empty() {
        return Err(AttributionError::NothingToMask(instance.id.clone()));
    }
    let f = masked_probability(model, &prepared, &positions, cfg.mask_token);
    let fit = match method {
        Method::Lime => lime(positions.len(), cfg, f)?,
        _ => kernel_shap(positions.len(), cfg, f)?,
    };
    let mut scores = vec![0.0; prepared.seq.len()];
    for (&p, &c) in positions.iter().zip(&fit.coefficients) {
        scores[p] = c;
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(AttributionError::NonFinite(method.name()));
    }
    let mut map = token_map(method, instance, &prepared, &scores);
    map.seed = Some(cfg.seed);
    if fit.ridge_used {
        map.flags.push("ridge-fallback".into());
    }
    Ok(map)
}

/// LIME over the question and context words; masked words become `cfg.mask_token`.
pub fn lime_tokens(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &SurrogateConfig,
) -> Result<AttributionMap, AttributionError> {
    surrogate_tokens(Method::Lime, model, instance, cfg)
}

pub fn kernelshap_tokens(
    model: &MicroTransformer,
    instance: &Instance,
    cfg: &SurrogateConfig,
) -> Result<AttributionMap, AttributionError> {
    surrogate_tokens(Method::Shap, model, instance, cfg)
}
