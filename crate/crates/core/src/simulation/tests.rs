use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attribution::Method;
use crate::model::{Answer, Instance, Target};

fn brute_force(pairs: &[(f64, u8)]) -> (f64, Option<f64>) {
    let n = pairs.len() as f64;
    let acc = |t: f64| pairs.iter().filter(|(f, z)| u8::from(*f > t) == *z).count() as f64 / n;
    let mut best = acc(f64::NEG_INFINITY);
    for &(t, _) in pairs {
        best = best.max(acc(t));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(fp, zp) in pairs {
        for &(fq, zq) in pairs {
            if zp == 1 && zq == 0 {
                den += 1.0;
                num += if fp > fq {
                    1.0
                } else if fp == fq {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (best, (den > 0.0).then(|| num / den))
}

fn nb(setting: Setting, p: Vec<usize>, q: Vec<usize>) -> Neighborhood {
    Neighborhood {
        id: "nb".into(),
        base: Instance::new("b", "x", "y", Answer::YesNo(true)),
        perturbations: Vec::new(),
        setting,
        z: Some(1),
        predictions: Vec::new(),
        base_confidence: Some(0.9),
        target_tokens: p,
        question_tokens: q,
        keywords: Vec::new(),
    }
}

fn map(kind: MapKind, len: usize, scores: Vec<f64>) -> AttributionMap {
    AttributionMap {
        method: if kind == MapKind::Token { Method::IntGrad } else { Method::LAtAttr },
        instance_id: "b".into(),
        kind,
        len,
        scores,
        target: Target::YesNo(1),
        m: None,
        seed: None,
        flags: Vec::new(),
    }
}

#[test]
fn separable_scores() {
    let s = simulate(&[(0.9, 1), (0.8, 1), (0.2, 0), (0.1, 0)]).unwrap();
    assert_eq!(s.s_acc, 1.0);
    assert_eq!(s.s_auc, Some(1.0));
    assert!(s.threshold > 0.2 && s.threshold < 0.8);
}

#[test]
fn interleaved_scores() {
    let s = simulate(&[(0.9, 1), (0.8, 0), (0.2, 0), (0.1, 1)]).unwrap();
    assert_eq!(s.s_acc, 0.75);
    assert_eq!(s.s_auc, Some(0.5));
}

#[test]
fn tied_scores_count_half() {
    assert_eq!(simulate(&[(0.5, 1), (0.5, 0)]).unwrap().s_auc, Some(0.5));
}

#[test]
fn single_class_has_no_auc() {
    let s = simulate(&[(1.0, 0), (2.0, 0)]).unwrap();
    assert_eq!(s.s_auc, None);
    assert_eq!(s.s_acc, 1.0);
    assert_eq!(s.threshold, f64::INFINITY);
    assert_eq!(simulate(&[]).unwrap_err(), SimulationError::Empty);
}

#[test]
fn matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let pairs: Vec<(f64, u8)> = (0..n)
            .map(|_| (f64::from(rng.random_range(0..6)) / 2.0, u8::from(rng.random_bool(0.5))))
            .collect();
        let s = simulate(&pairs).unwrap();
        let (acc, auc) = brute_force(&pairs);
        assert_eq!(s.s_acc, acc);
        assert_eq!(s.s_auc, auc);
    }
}

#[test]
fn oracle_factor_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<(f64, u8)> = (0..50)
        .map(|_| {
            let z = u8::from(rng.random_bool(0.4));
            (f64::from(z) + 1e-6 * rng.random::<f64>(), z)
        })
        .collect();
    assert_eq!(simulate(&pairs).unwrap().s_acc, 1.0);
}

#[test]
fn shuffled_factor_has_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let f: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
    let mut z: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
    let mut total = 0.0;
    for _ in 0..1000 {
        z.shuffle(&mut rng);
        let pairs: Vec<(f64, u8)> = f.iter().copied().zip(z.iter().copied()).collect();
        total += simulate(&pairs).unwrap().s_auc.unwrap();
    }
    let mean = total / 1000.0;
    assert!((0.45..=0.55).contains(&mean), "{mean}");
}

#[test]
fn token_factor_sums_targets() {
    let m = map(MapKind::Token, 4, vec![0.1, 0.4, 0.3, -2.0]);
    let f = extract_factor(&m, &nb(Setting::YesNo, vec![1, 2], vec![]));
    assert!((f.value - 0.7).abs() < 1e-12);
    assert_eq!(f.mode, FactorMode::Sum);
}

#[test]
fn pairwise_factor_counts_cells_once() {
    let m = map(MapKind::Pairwise, 3, vec![1.0; 9]);
    let f = extract_factor(&m, &nb(Setting::Distractor, vec![0], vec![]));
    assert_eq!(f.value, 5.0);
    assert_eq!(f.mode, FactorMode::PairPool);
}

#[test]
fn bridge_factor_is_normalized() {
    let m = map(MapKind::Token, 4, vec![1.0, 1.0, 2.0, 0.0]);
    let f = extract_factor(&m, &nb(Setting::Bridge, vec![0, 1], vec![0, 1, 2, 3]));
    assert_eq!(f.value, 0.5);
    assert!(!f.degenerate);
    let zero = map(MapKind::Token, 4, vec![0.0; 4]);
    let f = extract_factor(&zero, &nb(Setting::Bridge, vec![0], vec![0, 1]));
    assert_eq!(f.value, 0.0);
    assert!(f.degenerate);
}

#[test]
fn confidence_orientation_per_setting() {
    assert_eq!(confidence_factor(0.8, Setting::YesNo).value, -0.8);
    assert_eq!(confidence_factor(0.8, Setting::Bridge).value, -0.8);
    assert_eq!(confidence_factor(0.8, Setting::Distractor).value, 0.8);
}

#[test]
fn absolute_mode_ignores_sign() {
    let m = map(MapKind::Token, 3, vec![-1.0, 2.0, 0.0]);
    let n = nb(Setting::YesNo, vec![0, 1], vec![]);
    assert_eq!(extract_factor_with(&m, &n, false).value, 1.0);
    assert_eq!(extract_factor_with(&m, &n, true).value, 3.0);
}

#[test]
fn infinite_thresholds_survive_json() {
    let s = simulate(&[(1.0, 0), (2.0, 0)]).unwrap();
    let text = serde_json::to_string(&s).unwrap();
    assert!(text.contains("+inf"));
    let back: Simulation = serde_json::from_str(&text).unwrap();
    assert_eq!(back, s);
}

fn pairs_strategy() -> impl Strategy<Value = Vec<(f64, u8)>> {
    prop::collection::vec(((-20i32..20).prop_map(|v| f64::from(v) / 4.0), 0u8..2), 1..40)
}

proptest! {
    #[test]
    fn accuracy_never_below_prior(pairs in pairs_strategy()) {
        let s = simulate(&pairs).unwrap();
        let pos = pairs.iter().filter(|p| p.1 == 1).count();
        let majority = pos.max(pairs.len() - pos) as f64 / pairs.len() as f64;
        prop_assert!(s.s_acc >= majority);
    }

    #[test]
    fn auc_is_rank_invariant(pairs in pairs_strategy()) {
        let moved: Vec<(f64, u8)> = pairs.iter().map(|&(f, z)| (f.powi(3) * 2.0 + 7.0, z)).collect();
        prop_assert_eq!(simulate(&pairs).unwrap().s_auc, simulate(&moved).unwrap().s_auc);
        prop_assert_eq!(simulate(&pairs).unwrap().s_acc, simulate(&moved).unwrap().s_acc);
    }

    #[test]
    fn reversed_labels_mirror_auc(pairs in pairs_strategy()) {
        let flipped: Vec<(f64, u8)> = pairs.iter().map(|&(f, z)| (f, 1 - z)).collect();
        if let (Some(a), Some(b)) = (simulate(&pairs).unwrap().s_auc, simulate(&flipped).unwrap().s_auc) {
            prop_assert!((a - (1.0 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn pair_pooling_matches_set_union(
        n in 2usize..9,
        cells in prop::collection::vec((0usize..9, 0usize..9, -3i32..4), 0..30),
        targets in prop::collection::vec(0usize..9, 0..5),
    ) {
        let mut scores = vec![0.0; n * n];
        for (i, j, v) in cells {
            if i < n && j < n {
                scores[i * n + j] = f64::from(v);
            }
        }
        let p: Vec<usize> = targets.into_iter().filter(|&t| t < n).collect();
        let mut covered = std::collections::BTreeSet::new();
        for &t in &p {
            for k in 0..n {
                covered.insert((t, k));
                covered.insert((k, t));
            }
        }
        let want: f64 = covered.iter().map(|&(i, j)| scores[i * n + j]).sum();
        let m = map(MapKind::Pairwise, n, scores);
        prop_assert_eq!(importance(&m, &p, false), want);
    }
}
