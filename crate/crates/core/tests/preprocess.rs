mod oracles;

use alrt_core::data_ingest::{PatientRecord, RawColumnSchema, RawRow};
use alrt_core::preprocess::{self, ImputationPolicy, N_FEATURES, N_RAW_FEATURES};
use alrt_core::{seed, Matrix};
use proptest::prelude::*;
use rand::Rng;

fn raw_columns(schema: &RawColumnSchema) -> Vec<usize> {
    schema
        .vital_indices()
        .iter()
        .chain(schema.lab_indices())
        .copied()
        .collect()
}

/// A record whose vital/lab cells are observed with probability `density`,
/// with values that can never collide with the sentinel medians.
fn random_record(index: u64, density: f64) -> PatientRecord {
    let schema = RawColumnSchema::physionet_2019();
    let mut rng = seed::rng(5, "missingness-pattern", index);
    let t_len = rng.gen_range(1..=80);
    let rows = (0..t_len)
        .map(|t| {
            let mut values = vec![None; schema.len()];
            for &c in &raw_columns(&schema) {
                if rng.gen_bool(density) {
                    values[c] = Some(rng.gen_range(-50.0..50.0));
                }
            }
            for &c in schema.demographic_indices() {
                values[c] = Some(t as f64);
            }
            values[schema.label_index()] = Some(0.0);
            RawRow { values }
        })
        .collect();
    PatientRecord {
        patient_id: format!("r{index}"),
        rows,
        labels: vec![false; t_len],
    }
}

fn sentinel_medians() -> Vec<f64> {
    (0..N_RAW_FEATURES).map(|j| 1000.0 + j as f64).collect()
}

#[test]
fn imputation_matches_bounded_forward_fill() {
    let schema = RawColumnSchema::physionet_2019();
    let policy = ImputationPolicy::default();
    let medians = sentinel_medians();
    let cols = raw_columns(&schema);
    let n_vitals = schema.vital_indices().len();
    for i in 0..1000 {
        let density = [0.02, 0.1, 0.3, 0.7][i as usize % 4];
        let r = random_record(i, density);
        let out = preprocess::impute(&r, &schema, &policy, &medians).unwrap();
        assert!(out.as_slice().iter().all(|v| v.is_finite()));
        for (j, &c) in cols.iter().enumerate() {
            let horizon = if j < n_vitals {
                policy.vital_ffill_horizon
            } else {
                policy.lab_ffill_horizon
            };
            let column: Vec<Option<f64>> = r.rows.iter().map(|row| row.values[c]).collect();
            let expected = oracles::reference_fill(&column, horizon, medians[j]);
            let got: Vec<f64> = out.column(j).collect();
            assert_eq!(got, expected, "pattern {i}, column {j}");

            // A carried value is never older than the horizon.
            for (t, v) in got.iter().enumerate() {
                if column[t].is_none() && *v != medians[j] {
                    let last = (0..t).rev().find(|&s| column[s].is_some()).unwrap();
                    assert!(t - last <= horizon);
                }
            }
        }
    }
}

#[test]
fn horizon_edges() {
    let schema = RawColumnSchema::physionet_2019();
    let hr = schema.index_of("HR").unwrap();
    let lactate = schema.index_of("Lactate").unwrap();
    let mut r = random_record(0, 0.0);
    r.rows.truncate(1);
    r.rows.resize(60, r.rows[0].clone());
    r.labels = vec![false; 60];
    r.rows[0].values[hr] = Some(90.0);
    r.rows[0].values[lactate] = Some(3.0);
    let medians = sentinel_medians();
    let out = preprocess::impute(&r, &schema, &ImputationPolicy::default(), &medians).unwrap();
    let hr_j = 0;
    let lac_j = 8 + schema
        .lab_indices()
        .iter()
        .position(|&c| c == lactate)
        .unwrap();
    assert_eq!(out.get(12, hr_j), 90.0);
    assert_eq!(out.get(13, hr_j), medians[hr_j]);
    assert_eq!(out.get(36, lac_j), 3.0);
    assert_eq!(out.get(37, lac_j), medians[lac_j]);
}

#[test]
fn lab_counts_match_window_sums() {
    let schema = RawColumnSchema::physionet_2019();
    for i in 0..200 {
        let r = random_record(i, 0.15);
        let per_hour: Vec<u32> = r
            .rows
            .iter()
            .map(|row| {
                schema
                    .lab_indices()
                    .iter()
                    .filter(|&&c| row.values[c].is_some())
                    .count() as u32
            })
            .collect();
        let (c12, c48) = preprocess::engineer_lab_counts(&r, &schema);
        assert_eq!(c12, oracles::reference_window_counts(&per_hour, 12));
        assert_eq!(c48, oracles::reference_window_counts(&per_hour, 48));
        for t in 0..r.len() {
            assert!(c12[t] <= c48[t]);
        }
    }
}

#[test]
fn features_have_engineered_tail() {
    let schema = RawColumnSchema::physionet_2019();
    let names = preprocess::feature_names(&schema);
    assert_eq!(names.len(), N_FEATURES);
    assert_eq!(&names[N_FEATURES - 2..], ["LabCount12h", "LabCount48h"]);
    let r = random_record(3, 0.2);
    let m = preprocess::build_features(
        &r,
        &schema,
        &ImputationPolicy::default(),
        &sentinel_medians(),
    )
    .unwrap();
    let (c12, c48) = preprocess::engineer_lab_counts(&r, &schema);
    for t in 0..r.len() {
        assert_eq!(m.get(t, 34), c12[t] as f64);
        assert_eq!(m.get(t, 35), c48[t] as f64);
    }
}

fn matrices_strategy() -> impl Strategy<Value = Vec<Matrix>> {
    prop::collection::vec(
        (1usize..8).prop_flat_map(|rows| {
            prop::collection::vec(-1e3f64..1e3, rows * 3)
                .prop_map(move |data| Matrix::from_vec(rows, 3, data).unwrap())
        }),
        1..6,
    )
}

proptest! {
    #[test]
    fn counts_are_monotone_in_time_without_gaps(density in 0.05f64..0.9, index in 0u64..500) {
        let schema = RawColumnSchema::physionet_2019();
        let r = random_record(index, density);
        let (_, c48) = preprocess::engineer_lab_counts(&r, &schema);
        // While the window still reaches admission, counts can only grow.
        for t in 1..r.len().min(48) {
            prop_assert!(c48[t] >= c48[t - 1]);
        }
    }

    #[test]
    fn scaler_inverts_and_standardizes(ms in matrices_strategy()) {
        let params = preprocess::fit_scaler(&ms).unwrap();
        let scaled: Vec<Matrix> = ms.iter().map(|m| preprocess::apply_scaler(m, &params).unwrap()).collect();
        for (m, s) in ms.iter().zip(&scaled) {
            let back = preprocess::invert_scaler(s, &params).unwrap();
            for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
        let n: usize = scaled.iter().map(|m| m.rows()).sum();
        for j in 0..3 {
            let col: Vec<f64> = scaled.iter().flat_map(|m| m.column(j).collect::<Vec<_>>()).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            if params.scale[j] != 1.0 {
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn constant_column_scales_by_one() {
    let m = Matrix::from_rows(&[vec![4.0, 1.0], vec![4.0, 3.0]]).unwrap();
    let p = preprocess::fit_scaler(std::slice::from_ref(&m)).unwrap();
    assert_eq!(p.scale[0], 1.0);
    let s = preprocess::apply_scaler(&m, &p).unwrap();
    assert_eq!(s.get(0, 0), 0.0);
}

#[test]
fn class_weights_balance_the_loss() {
    let labels: Vec<bool> = (0..100).map(|i| i < 6).collect();
    let w = preprocess::compute_class_weights(labels.iter()).unwrap();
    assert!((w.weight_positive - 100.0 / 12.0).abs() < 1e-12);
    assert!((w.weight_negative - 100.0 / 188.0).abs() < 1e-12);
    assert!((6.0 * w.weight_positive - 94.0 * w.weight_negative).abs() < 1e-9);
}
