//! Uncertainty scores for variable-length binary sequence predictions and
//! top-k selection of the most uncertain patients.
//!
//! Each timestep contributes the two-class distribution `(p_t, 1 - p_t)`.
//! The normalized scorers average the per-timestep quantity over the
//! sequence so long stays are not favoured; the plain scorers sum it.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::par::{self, Parallelism};
use crate::preprocess::FeatureSequence;

/// Acquisition family, independent of length normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LeastConfident,
    Margin,
    Entropy,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::LeastConfident,
        Strategy::Margin,
        Strategy::Entropy,
    ];

    /// Suffix used in model row labels such as `RNN_40e`.
    pub fn suffix(self) -> &'static str {
        match self {
            Strategy::LeastConfident => "lc",
            Strategy::Margin => "m",
            Strategy::Entropy => "e",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::LeastConfident => "least_confident",
            Strategy::Margin => "margin",
            Strategy::Entropy => "entropy",
        }
    }

    pub fn method(self, normalized: bool) -> ScoreMethod {
        match (self, normalized) {
            (Strategy::LeastConfident, false) => ScoreMethod::Lc,
            (Strategy::Margin, false) => ScoreMethod::Margin,
            (Strategy::Entropy, false) => ScoreMethod::Entropy,
            (Strategy::LeastConfident, true) => ScoreMethod::NormLc,
            (Strategy::Margin, true) => ScoreMethod::NormMargin,
            (Strategy::Entropy, true) => ScoreMethod::NormEntropy,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lc" | "least_confident" | "least-confident" | "uncertainty" => {
                Ok(Strategy::LeastConfident)
            }
            "m" | "margin" => Ok(Strategy::Margin),
            "e" | "entropy" => Ok(Strategy::Entropy),
            other => Err(Error::Config(format!("unknown sampling method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Lc,
    Margin,
    Entropy,
    NormLc,
    NormMargin,
    NormEntropy,
}

impl ScoreMethod {
    pub const ALL: [ScoreMethod; 6] = [
        ScoreMethod::Lc,
        ScoreMethod::Margin,
        ScoreMethod::Entropy,
        ScoreMethod::NormLc,
        ScoreMethod::NormMargin,
        ScoreMethod::NormEntropy,
    ];

    pub fn is_normalized(self) -> bool {
        matches!(
            self,
            ScoreMethod::NormLc | ScoreMethod::NormMargin | ScoreMethod::NormEntropy
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreMethod::Lc => "lc",
            ScoreMethod::Margin => "margin",
            ScoreMethod::Entropy => "entropy",
            ScoreMethod::NormLc => "norm_lc",
            ScoreMethod::NormMargin => "norm_margin",
            ScoreMethod::NormEntropy => "norm_entropy",
        }
    }

    /// Raw score of a sequence of positive-class probabilities.
    pub fn score(self, probs: &[f64]) -> Result<f64> {
        match self {
            ScoreMethod::Lc => sum_over(probs, least_confidence),
            ScoreMethod::Margin => sum_over(probs, margin),
            ScoreMethod::Entropy => sum_over(probs, entropy),
            ScoreMethod::NormLc => score_least_confident(probs),
            ScoreMethod::NormMargin => score_margin(probs),
            ScoreMethod::NormEntropy => score_entropy(probs),
        }
    }

    /// Maps a raw score to "higher is more uncertain". Margin is the only
    /// family where a small value means uncertain.
    pub fn uncertainty(self, raw: f64) -> f64 {
        match self {
            ScoreMethod::Margin | ScoreMethod::NormMargin => -raw,
            _ => raw,
        }
    }
}

impl fmt::Display for ScoreMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn least_confidence(p: f64) -> f64 {
    1.0 - p.max(1.0 - p)
}

#[inline]
fn margin(p: f64) -> f64 {
    // top-1 minus top-2 of (p, 1 - p)
    (p - (1.0 - p)).abs()
}

#[inline]
fn entropy(p: f64) -> f64 {
    let plogp = |q: f64| if q > 0.0 { q * q.ln() } else { 0.0 };
    -(plogp(p) + plogp(1.0 - p))
}

fn sum_over(probs: &[f64], f: fn(f64) -> f64) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::Empty("cannot score an empty sequence".into()));
    }
    Ok(probs.iter().map(|&p| f(p)).sum())
}

fn mean_over(probs: &[f64], f: fn(f64) -> f64) -> Result<f64> {
    Ok(sum_over(probs, f)? / probs.len() as f64)
}

/// Mean over timesteps of `1 - max(p, 1 - p)`.
pub fn score_least_confident(probs: &[f64]) -> Result<f64> {
    mean_over(probs, least_confidence)
}

/// Mean over timesteps of `|p - (1 - p)|`. Smaller is more uncertain.
pub fn score_margin(probs: &[f64]) -> Result<f64> {
    mean_over(probs, margin)
}

/// Mean over timesteps of the binary entropy in nats.
pub fn score_entropy(probs: &[f64]) -> Result<f64> {
    mean_over(probs, entropy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub patient_id: String,
    pub score: f64,
    pub method: ScoreMethod,
}

impl UncertaintyScore {
    pub fn uncertainty(&self) -> f64 {
        self.method.uncertainty(self.score)
    }
}

/// Scores every sequence with a frozen model. Output order matches input.
pub fn score_pool(
    params: &ModelParams,
    pool: &[&FeatureSequence],
    method: ScoreMethod,
    mode: Parallelism,
) -> Result<Vec<UncertaintyScore>> {
    par::try_map(mode, pool, |seq| {
        let probs = model::forward(params, &seq.matrix)?;
        Ok(UncertaintyScore {
            patient_id: seq.patient_id.clone(),
            score: method.score(&probs)?,
            method,
        })
    })
}

fn most_uncertain_first(a: &UncertaintyScore, b: &UncertaintyScore) -> Ordering {
    b.uncertainty()
        .total_cmp(&a.uncertainty())
        .then_with(|| a.patient_id.cmp(&b.patient_id))
}

/// The `k` most uncertain entries, most uncertain first; ties go to the
/// lexicographically smaller patient id.
pub fn select_top(scores: &[UncertaintyScore], k: usize) -> Result<Vec<UncertaintyScore>> {
    if let Some(first) = scores.first() {
        if scores.iter().any(|s| s.method != first.method) {
            return Err(Error::Config(
                "cannot rank scores from different methods together".into(),
            ));
        }
    }
    if k > scores.len() {
        return Err(Error::Config(format!(
            "asked for {k} patients from a pool of {}",
            scores.len()
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(most_uncertain_first);
    sorted.truncate(k);
    Ok(sorted)
}

pub fn select_batch(scores: &[UncertaintyScore], k: usize) -> Result<Vec<String>> {
    Ok(select_top(scores, k)?
        .into_iter()
        .map(|s| s.patient_id)
        .collect())
}

/// CSV rows `patient_id,method,score,round` with a header line.
pub fn scores_to_csv(scores: &[UncertaintyScore], round: usize) -> String {
    let mut out = String::from("patient_id,method,score,round\n");
    for s in scores {
        out.push_str(&format!(
            "{},{},{},{}\n",
            s.patient_id, s.method, s.score, round
        ));
    }
    out
}
