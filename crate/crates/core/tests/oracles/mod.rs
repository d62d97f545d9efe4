//! Brute-force reference implementations, coded independently of the
//! library, shared by the integration tests and the acceptance suite.
#![allow(dead_code, clippy::needless_range_loop)]

use alrt_core::model::ModelParams;
use alrt_core::preprocess::ClassWeights;
use alrt_core::sampling::ScoreMethod;
use alrt_core::Matrix;

/// Two-class distribution sorted most-probable first.
fn sorted_classes(p: f64) -> [f64; 2] {
    let mut q = [p, 1.0 - p];
    q.sort_by(|a, b| b.partial_cmp(a).unwrap());
    q
}

fn lc_step(p: f64) -> f64 {
    1.0 - sorted_classes(p)[0]
}

fn margin_step(p: f64) -> f64 {
    let q = sorted_classes(p);
    q[0] - q[1]
}

fn entropy_step(p: f64) -> f64 {
    [p, 1.0 - p]
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.ln())
        .sum()
}

/// Score of a positive-class probability sequence, summed over time or
/// averaged when `normalized`.
pub fn brute_score(method: ScoreMethod, probs: &[f64]) -> f64 {
    let step: fn(f64) -> f64 = match method.name().trim_start_matches("norm_") {
        "lc" => lc_step,
        "margin" => margin_step,
        "entropy" => entropy_step,
        other => panic!("unknown method {other}"),
    };
    let mut total = 0.0;
    for &p in probs {
        total += step(p);
    }
    if method.name().starts_with("norm_") {
        total / probs.len() as f64
    } else {
        total
    }
}

/// Elman forward pass written with explicit index loops.
pub fn reference_forward(p: &ModelParams, x: &Matrix) -> Vec<f64> {
    let (d, hd) = (p.input_dim, p.hidden_dim);
    let mut h = vec![0.0; hd];
    let mut out = Vec::new();
    for t in 0..x.rows() {
        let mut next = vec![0.0; hd];
        for i in 0..hd {
            let mut a = p.b_h[i];
            for k in 0..d {
                a += p.w_xh[i * d + k] * x.get(t, k);
            }
            for k in 0..hd {
                a += p.w_hh[i * hd + k] * h[k];
            }
            next[i] = a.tanh();
        }
        h = next;
        let mut z = p.b_y;
        for i in 0..hd {
            z += p.w_hy[i] * h[i];
        }
        out.push(1.0 / (1.0 + (-z).exp()));
    }
    out
}

pub fn reference_loss(p: &ModelParams, x: &Matrix, labels: &[bool], w: &ClassWeights) -> f64 {
    let probs = reference_forward(p, x);
    let mut total = 0.0;
    for (q, &y) in probs.iter().zip(labels) {
        let q = q.clamp(1e-12, 1.0 - 1e-12);
        total += if y {
            -w.weight_positive * q.ln()
        } else {
            -w.weight_negative * (1.0 - q).ln()
        };
    }
    total / probs.len() as f64
}

/// Central finite-difference gradient of [`reference_loss`], flattened in
/// the order w_xh, w_hh, b_h, w_hy, b_y.
pub fn numeric_gradient(
    p: &ModelParams,
    x: &Matrix,
    labels: &[bool],
    w: &ClassWeights,
    step: f64,
) -> Vec<f64> {
    let n = p.n_params();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let mut plus = p.clone();
        let mut minus = p.clone();
        *plus.values_mut().nth(i).unwrap() += step;
        *minus.values_mut().nth(i).unwrap() -= step;
        grad.push(
            (reference_loss(&plus, x, labels, w) - reference_loss(&minus, x, labels, w))
                / (2.0 * step),
        );
    }
    grad
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Step-interpolated area under precision-recall, recomputing the
/// confusion counts from scratch at every distinct threshold.
pub fn brute_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for tau in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, &y) in scores.iter().zip(labels) {
            if *s >= tau {
                if y {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        area += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    area
}

/// Bounded forward fill of one column: observed values pass through, gaps
/// within `horizon` hours of the last observation repeat it, anything else
/// becomes `fallback`.
pub fn reference_fill(column: &[Option<f64>], horizon: usize, fallback: f64) -> Vec<f64> {
    (0..column.len())
        .map(|t| {
            (0..=t)
                .rev()
                .take(horizon + 1)
                .find_map(|s| column[s])
                .unwrap_or(fallback)
        })
        .collect()
}

/// Sliding count over the `window` hours ending at each `t`.
pub fn reference_window_counts(per_hour: &[u32], window: usize) -> Vec<u32> {
    (0..per_hour.len())
        .map(|t| per_hour[t.saturating_sub(window - 1)..=t].iter().sum())
        .collect()
}

/// Checks partition, monotone growth and schedule of a finished run.
pub fn check_pool_invariants(
    train_ids: &std::collections::BTreeSet<String>,
    run: &alrt_core::active_loop::AlrtRun,
    config: &alrt_core::active_loop::ExperimentConfig,
) -> Result<(), String> {
    use std::collections::BTreeSet;
    let n = train_ids.len();
    let pool = &run.pool;
    if !pool.unlabeled.is_empty() || &pool.labeled != train_ids {
        return Err("final pool does not cover the training set".into());
    }
    if pool.round != config.rounds - 1 || pool.history.len() != config.rounds - 1 {
        return Err(format!(
            "{} transfers recorded, expected {}",
            pool.history.len(),
            config.rounds - 1
        ));
    }
    let transferred: BTreeSet<&String> = pool
        .history
        .iter()
        .flat_map(|h| h.transferred.iter().map(|s| &s.patient_id))
        .collect();
    let mut labeled: BTreeSet<&String> = train_ids
        .iter()
        .filter(|id| !transferred.contains(id))
        .collect();
    if labeled.len() != config.labeled_target(0, n) {
        return Err(format!("initial pool has {} patients", labeled.len()));
    }
    if run.snapshots.len() != config.rounds {
        return Err(format!("{} snapshots", run.snapshots.len()));
    }
    for (r, snap) in run.snapshots.iter().enumerate() {
        if snap.round != r || snap.fraction_level != config.fraction_level(r) {
            return Err(format!("snapshot {r} mislabeled"));
        }
        if snap.labeled_count != config.labeled_target(r, n) || labeled.len() != snap.labeled_count
        {
            return Err(format!(
                "round {r}: {} labeled, schedule says {}",
                labeled.len(),
                config.labeled_target(r, n)
            ));
        }
        if let Some(h) = pool.history.get(r) {
            if h.round != r {
                return Err(format!("transfer {r} recorded as round {}", h.round));
            }
            for pair in h.transferred.windows(2) {
                if pair[0].uncertainty() < pair[1].uncertainty() {
                    return Err(format!("transfer {r} not ordered by uncertainty"));
                }
            }
            for s in &h.transferred {
                if !labeled.insert(&s.patient_id) {
                    return Err(format!("{} transferred twice", s.patient_id));
                }
            }
        }
    }
    Ok(())
}
