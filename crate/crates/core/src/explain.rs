//! Permutation feature importance for a trained sequence model.
//!
//! A feature's importance is the drop in pooled timestep AUROC when its
//! column is shuffled across every timestep of every test patient.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, EvalMode};
use crate::model::ModelParams;
use crate::par::{self, Parallelism};
use crate::preprocess::FeatureSequence;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub column: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Sorted by descending importance; ties keep column order.
    pub ranking: Vec<FeatureImportance>,
    pub baseline_auroc: f64,
    pub permutation_seed: u64,
    pub repeats: usize,
}

impl ImportanceReport {
    pub fn importance_of(&self, feature: &str) -> Option<f64> {
        self.ranking
            .iter()
            .find(|f| f.feature == feature)
            .map(|f| f.importance)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,feature,importance\n");
        for (i, f) in self.ranking.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, f.feature, f.importance);
        }
        out
    }

    pub fn top_table(&self, n: usize) -> String {
        let mut out = format!(
            "baseline AUROC {:.4} (seed {}, {} repeats)\n{:>4}  {:<18} {:>10}\n",
            self.baseline_auroc,
            self.permutation_seed,
            self.repeats,
            "rank",
            "feature",
            "importance"
        );
        for (i, f) in self.ranking.iter().take(n).enumerate() {
            let _ = writeln!(
                out,
                "{:>4}  {:<18} {:>10.6}",
                i + 1,
                f.feature,
                f.importance
            );
        }
        out
    }
}

fn pooled_auroc(params: &ModelParams, sequences: &[FeatureSequence]) -> Result<f64> {
    let refs: Vec<&FeatureSequence> = sequences.iter().collect();
    let (probs, labels) =
        metrics::pooled_predictions(params, &refs, EvalMode::Timestep, Parallelism::Sequential)?;
    metrics::auroc(&probs, &labels)
}

fn permuted_auroc(
    params: &ModelParams,
    test: &[&FeatureSequence],
    column: usize,
    rng_seed: u64,
    index: u64,
) -> Result<f64> {
    let mut values: Vec<f64> = test.iter().flat_map(|s| s.matrix.column(column)).collect();
    values.shuffle(&mut seed::rng(rng_seed, "permute", index));
    let mut next = values.into_iter();
    let permuted: Vec<FeatureSequence> = test
        .iter()
        .map(|s| {
            let mut s = (*s).clone();
            for t in 0..s.matrix.rows() {
                s.matrix.set(t, column, next.next().unwrap_or_default());
            }
            s
        })
        .collect();
    pooled_auroc(params, &permuted)
}

pub fn permutation_importance(
    params: &ModelParams,
    test: &[&FeatureSequence],
    feature_names: &[String],
    rng_seed: u64,
    repeats: usize,
    parallelism: Parallelism,
) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be positive".into()));
    }
    if feature_names.len() != params.input_dim {
        return Err(Error::Dimension {
            what: "feature names",
            expected: params.input_dim,
            found: feature_names.len(),
        });
    }
    let owned: Vec<FeatureSequence> = test.iter().map(|s| (*s).clone()).collect();
    let baseline_auroc = pooled_auroc(params, &owned)?;
    let drops = par::try_map_range(parallelism, params.input_dim, |j| {
        let mut total = 0.0;
        for r in 0..repeats {
            let index = ((j as u64) << 32) | r as u64;
            total += permuted_auroc(params, test, j, rng_seed, index)?;
        }
        Ok::<f64, Error>(baseline_auroc - total / repeats as f64)
    })?;
    let mut ranking: Vec<FeatureImportance> = drops
        .into_iter()
        .enumerate()
        .map(|(column, importance)| FeatureImportance {
            feature: feature_names[column].clone(),
            column,
            importance,
        })
        .collect();
    ranking.sort_by(|a, b| b.importance.total_cmp(&a.importance));
    Ok(ImportanceReport {
        ranking,
        baseline_auroc,
        permutation_seed: rng_seed,
        repeats,
    })
}
