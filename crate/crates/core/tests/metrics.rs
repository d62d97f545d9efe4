mod oracles;

use alrt_core::metrics::{self, EvalReport};
use alrt_core::seed;
use proptest::prelude::*;
use rand::Rng;

/// Scores drawn either continuously or from a coarse grid so that ties occur.
fn random_set(index: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = seed::rng(99, "metric-sets", index);
    let n = rng.gen_range(2..=200);
    let coarse = rng.gen_bool(0.5);
    let prevalence = rng.gen_range(0.05..0.6);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(prevalence)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = labels
        .iter()
        .map(|&y| {
            let base: f64 = rng.gen_range(0.0..1.0) + if y { 0.3 } else { 0.0 };
            if coarse {
                (base * 5.0).floor() / 5.0
            } else {
                base
            }
        })
        .collect();
    (scores, labels)
}

#[test]
fn auroc_and_auprc_match_brute_force() {
    for i in 0..500 {
        let (s, y) = random_set(i);
        let a = metrics::auroc(&s, &y).unwrap();
        let p = metrics::auprc(&s, &y).unwrap();
        assert!(
            (a - oracles::pairwise_auroc(&s, &y)).abs() < 1e-9,
            "set {i}"
        );
        assert!((p - oracles::brute_auprc(&s, &y)).abs() < 1e-9, "set {i}");
    }
}

#[test]
fn constant_scores_give_chance_and_prevalence() {
    let y = [true, false, false, false];
    assert_eq!(metrics::auroc(&[0.3; 4], &y).unwrap(), 0.5);
    assert_eq!(metrics::auprc(&[0.3; 4], &y).unwrap(), 0.25);
}

#[test]
fn single_class_is_an_error() {
    assert!(metrics::auroc(&[0.1, 0.2], &[true, true]).is_err());
    assert!(metrics::auprc(&[0.1, 0.2], &[false, false]).is_err());
}

#[test]
fn zero_precision_denominator_is_flagged() {
    let r = EvalReport::compute(&[0.1, 0.2, 0.3], &[true, false, false], 0.5).unwrap();
    assert_eq!(r.precision, 0.0);
    assert!(r.precision_undefined);
    assert_eq!(r.specificity, 1.0);
    assert_eq!(r.sensitivity, 0.0);
}

proptest! {
    #[test]
    fn rank_metrics_ignore_monotone_transforms(index in 0u64..10_000) {
        let (s, y) = random_set(index);
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
        prop_assert!((metrics::auroc(&s, &y).unwrap() - metrics::auroc(&t, &y).unwrap()).abs() < 1e-12);
        prop_assert!((metrics::auprc(&s, &y).unwrap() - metrics::auprc(&t, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auroc_complement_symmetry(index in 0u64..10_000) {
        let (s, y) = random_set(index);
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let a = metrics::auroc(&s, &y).unwrap();
        prop_assert!((metrics::auroc(&neg, &y).unwrap() - (1.0 - a)).abs() < 1e-12);
        prop_assert!((metrics::auroc(&s, &flipped).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval(index in 0u64..10_000, threshold in 0.0f64..1.3) {
        let (s, y) = random_set(index);
        let r = EvalReport::compute(&s, &y, threshold).unwrap();
        for v in r.table_values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let c = r.counts;
        prop_assert_eq!(c.total() as usize, s.len());
        prop_assert_eq!((c.tp + c.fn_) as usize, y.iter().filter(|&&v| v).count());
    }
}
