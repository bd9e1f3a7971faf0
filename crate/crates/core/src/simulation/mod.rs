//! Factor extraction and threshold simulation of behavioral labels.

mod report;

pub use report::{build_report, run_pooled, run_setting, FactorRow, MethodRow, RowKind, SimulationReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{AttributionError, AttributionMap, MapKind};
use crate::counterfactuals::{Neighborhood, Setting};
use crate::model::ModelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulationError {
    #[error("simulation needs at least one (f, z) pair")]
    Empty,
    #[error("neighborhood {0} has no behavioral label")]
    Unlabeled(String),
    #[error("non-finite factor {value} for neighborhood {id}")]
    NonFinite { id: String, value: f64 },
    #[error("attribution map for {map} used with neighborhood {neighborhood}")]
    Mismatch { map: String, neighborhood: String },
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorMode {
    Sum,
    PairPool,
    Normalized,
    Confidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub value: f64,
    pub mode: FactorMode,
    pub targets: Vec<usize>,
    /// Q for normalized factors.
    pub normalizer: Option<Vec<usize>>,
    pub method: String,
    pub degenerate: bool,
}

/// Summed score over `set`: token scores, or every pair cell touching `set` counted once.
pub fn importance(map: &AttributionMap, set: &[usize], absolute: bool) -> f64 {
    let val = |v: f64| if absolute { v.abs() } else { v };
    let n = map.len;
    let mut member = vec![false; n];
    for &p in set {
        if p < n {
            member[p] = true;
        }
    }
    match map.kind {
        MapKind::Token => (0..n).filter(|&i| member[i]).map(|i| val(map.scores[i])).sum(),
        MapKind::Pairwise => {
            let mut total = 0.0;
            for i in 0..n {
                let row = &map.scores[i * n..(i + 1) * n];
                if member[i] {
                    total += row.iter().map(|&v| val(v)).sum::<f64>();
                } else {
                    total += (0..n).filter(|&j| member[j]).map(|j| val(row[j])).sum::<f64>();
                }
            }
            total
        }
    }
}

pub fn extract_factor(map: &AttributionMap, nb: &Neighborhood) -> Factor {
    extract_factor_with(map, nb, false)
}

/// Factor of a base-example map for the neighborhood's setting.
///
/// Yes-no and distractor sum P; bridge divides P's importance by Q's and
/// flags the factor as degenerate when Q carries no importance.
pub fn extract_factor_with(map: &AttributionMap, nb: &Neighborhood, absolute: bool) -> Factor {
    let p = nb.target_tokens.clone();
    let base_mode = match map.kind {
        MapKind::Token => FactorMode::Sum,
        MapKind::Pairwise => FactorMode::PairPool,
    };
    let ip = importance(map, &p, absolute);
    match nb.setting {
        Setting::YesNo | Setting::Distractor => Factor {
            value: ip,
            mode: base_mode,
            targets: p,
            normalizer: None,
            method: map.method.name().to_owned(),
            degenerate: false,
        },
        Setting::Bridge => {
            let q = nb.question_tokens.clone();
            let iq = importance(map, &q, absolute);
            let degenerate = iq == 0.0 || !iq.is_finite();
            Factor {
                value: if degenerate { 0.0 } else { ip / iq },
                mode: FactorMode::Normalized,
                targets: p,
                normalizer: Some(q),
                method: map.method.name().to_owned(),
                degenerate,
            }
        }
    }
}

/// Confidence baseline, oriented so that larger values predict `z = 1`.
pub fn confidence_factor(confidence: f64, setting: Setting) -> Factor {
    let value = match setting {
        Setting::YesNo | Setting::Bridge => -confidence,
        Setting::Distractor => confidence,
    };
    Factor {
        value,
        mode: FactorMode::Confidence,
        targets: Vec::new(),
        normalizer: None,
        method: "conf".to_owned(),
        degenerate: false,
    }
}

pub fn confidence_orientation(setting: Setting) -> &'static str {
    match setting {
        Setting::YesNo | Setting::Bridge => "negated",
        Setting::Distractor => "as-is",
    }
}

mod threshold_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(t: &f64, s: S) -> Result<S::Ok, S::Error> {
        if t.is_finite() {
            Repr::Finite(*t)
        } else if *t > 0.0 {
            Repr::Named("+inf".into())
        } else {
            Repr::Named("-inf".into())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(n) if n == "+inf" => Ok(f64::INFINITY),
            Repr::Named(n) if n == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Named(n) => Err(serde::de::Error::custom(format!("bad threshold {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub s_acc: f64,
    /// Predict `z = 1` iff `f > threshold`.
    #[serde(with = "threshold_serde")]
    pub threshold: f64,
    /// `None` when only one class is present.
    pub s_auc: Option<f64>,
}

pub const TIE_HANDLING: &str =
    "thresholds at midpoints of sorted unique f plus +-inf, z=1 iff f > t, accuracy ties go to the largest threshold; AUC counts tied pairs as 0.5";

/// Best threshold accuracy and Mann–Whitney AUC of `f` predicting `z`.
pub fn simulate(pairs: &[(f64, u8)]) -> Result<Simulation, SimulationError> {
    if pairs.is_empty() {
        return Err(SimulationError::Empty);
    }
    let mut values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    thresholds.push(f64::INFINITY);

    // Sweep from the top so that ties keep the largest threshold.
    let mut sorted: Vec<(f64, u8)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let negatives = pairs.iter().filter(|p| p.1 == 0).count();
    let mut correct = negatives; // t = +inf predicts all zeros
    let mut best = (correct, f64::INFINITY);
    let mut k = 0;
    for &t in thresholds.iter().rev().skip(1) {
        while k < sorted.len() && sorted[k].0 > t {
            correct = if sorted[k].1 == 1 { correct + 1 } else { correct - 1 };
            k += 1;
        }
        if correct > best.0 {
            best = (correct, t);
        }
    }
    Ok(Simulation {
        s_acc: best.0 as f64 / pairs.len() as f64,
        threshold: best.1,
        s_auc: auc(pairs),
    })
}

/// Rank-sum AUC with average ranks for ties.
fn auc(pairs: &[(f64, u8)]) -> Option<f64> {
    let pos = pairs.iter().filter(|p| p.1 == 1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pairs[idx[j + 1]].0 == pairs[idx[i]].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&k| pairs[k].1 == 1).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests;
