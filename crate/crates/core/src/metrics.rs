//! Threshold metrics and ranking metrics for imbalanced binary outcomes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::par::{self, Parallelism};
use crate::preprocess::FeatureSequence;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    /// Zero when nothing was predicted positive.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_inputs(probs: &[f64], labels: &[bool]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            what: "metric labels",
            expected: probs.len(),
            found: labels.len(),
        });
    }
    Ok(())
}

/// Counts with prediction = 1 iff `p >= threshold`.
pub fn confusion_at_threshold(probs: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    check_inputs(probs, labels)?;
    let mut c = Confusion::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted
/// half, via midranks.
pub fn auroc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("AUROC input"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += mid * pos_in_group as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Area under the precision-recall curve with step interpolation: the sum
/// over distinct thresholds (descending) of recall gain times precision.
pub fn auprc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 {
        return Err(Error::SingleClass("AUPRC input (no positives)"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub specificity: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub counts: Confusion,
    pub threshold: f64,
    /// Set when no sample was predicted positive, so precision was taken as 0.
    pub precision_undefined: bool,
}

impl EvalReport {
    pub fn compute(probs: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        let counts = confusion_at_threshold(probs, labels, threshold)?;
        Ok(Self {
            specificity: counts.specificity(),
            sensitivity: counts.sensitivity(),
            precision: counts.precision(),
            accuracy: counts.accuracy(),
            auroc: auroc(probs, labels)?,
            auprc: auprc(probs, labels)?,
            counts,
            threshold,
            precision_undefined: counts.tp + counts.fp == 0,
        })
    }

    /// Values in table column order: Specificity, Sensitivity, Precision,
    /// Accuracy, AUROC, AUPRC.
    pub fn table_values(&self) -> [f64; 6] {
        [
            self.specificity,
            self.sensitivity,
            self.precision,
            self.accuracy,
            self.auroc,
            self.auprc,
        ]
    }

    pub fn csv_header() -> &'static str {
        "Model,Specificity,Sensitivity,Precision,Accuracy,AUROC,AUPRC"
    }

    pub fn csv_row(&self, model_id: &str) -> String {
        csv_row(model_id, &self.table_values())
    }
}

pub fn csv_row(model_id: &str, values: &[f64; 6]) -> String {
    let mut row = model_id.to_string();
    for v in values {
        row.push(',');
        row.push_str(&v.to_string());
    }
    row
}

/// Unit of evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every hour of every patient, pooled.
    #[default]
    Timestep,
    /// One score per patient: the maximum hourly probability; septic if any
    /// hour is labeled positive.
    Patient,
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Timestep => "timestep",
            EvalMode::Patient => "patient",
        })
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "timestep" | "hour" => Ok(EvalMode::Timestep),
            "patient" => Ok(EvalMode::Patient),
            other => Err(Error::Config(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

/// Runs the model over `sequences` and returns pooled scores and labels.
pub fn pooled_predictions(
    params: &ModelParams,
    sequences: &[&FeatureSequence],
    mode: EvalMode,
    parallelism: Parallelism,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let per_seq = par::try_map(parallelism, sequences, |s| {
        model::forward(params, &s.matrix)
    })?;
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for (p, s) in per_seq.into_iter().zip(sequences) {
        match mode {
            EvalMode::Timestep => {
                probs.extend(p);
                labels.extend_from_slice(&s.labels);
            }
            EvalMode::Patient => {
                probs.push(p.into_iter().fold(f64::NEG_INFINITY, f64::max));
                labels.push(s.is_septic());
            }
        }
    }
    Ok((probs, labels))
}

pub fn evaluate(
    params: &ModelParams,
    sequences: &[&FeatureSequence],
    threshold: f64,
    mode: EvalMode,
    parallelism: Parallelism,
) -> Result<EvalReport> {
    let (probs, labels) = pooled_predictions(params, sequences, mode, parallelism)?;
    EvalReport::compute(&probs, &labels, threshold)
}
