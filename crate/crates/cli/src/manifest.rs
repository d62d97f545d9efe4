//! Flat key-value experiment manifest (TOML syntax, no tables).

use std::path::{Path, PathBuf};

use alrt_core::active_loop::ExperimentConfig;
use alrt_core::metrics::EvalMode;
use alrt_core::sampling::Strategy;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Manifest {
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// `all`, or a comma-separated list of `lc`, `margin`, `entropy`.
    pub sampling_method: String,
    pub normalized: bool,
    pub initial_fraction: f64,
    pub increment: f64,
    pub rounds: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    /// Global-norm clip; 0 disables clipping.
    pub gradient_clip: f64,
    pub warm_start: bool,
    pub include_baseline: bool,
    pub eval_mode: String,
    pub threshold: f64,
}

impl Default for Manifest {
    fn default() -> Self {
        let c = ExperimentConfig::default();
        Self {
            dataset_path: PathBuf::from("data"),
            output_dir: PathBuf::from("runs/experiment"),
            seed: c.seed,
            sampling_method: "all".into(),
            normalized: c.normalized,
            initial_fraction: c.initial_fraction,
            increment: c.increment,
            rounds: c.rounds,
            hidden_dim: c.hidden_dim,
            learning_rate: c.learning_rate,
            gradient_clip: c.gradient_clip.unwrap_or(0.0),
            warm_start: c.warm_start,
            include_baseline: c.include_baseline,
            eval_mode: c.eval_mode.to_string(),
            threshold: c.threshold,
        }
    }
}

pub fn parse_methods(spec: &str) -> Result<Vec<Strategy>, CliError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Strategy::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',').filter(|p| !p.trim().is_empty()) {
        let s: Strategy = part.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("no sampling method in `{spec}`")));
    }
    Ok(out)
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are plain values")
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig, CliError> {
        let config = ExperimentConfig {
            strategies: parse_methods(&self.sampling_method)?,
            normalized: self.normalized,
            initial_fraction: self.initial_fraction,
            increment: self.increment,
            rounds: self.rounds,
            hidden_dim: self.hidden_dim,
            learning_rate: self.learning_rate,
            gradient_clip: (self.gradient_clip > 0.0).then_some(self.gradient_clip),
            seed: self.seed,
            warm_start: self.warm_start,
            include_baseline: self.include_baseline,
            eval_mode: self.eval_mode.parse::<EvalMode>()?,
            threshold: self.threshold,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_experiment_defaults() {
        let m = Manifest::parse("").unwrap();
        assert_eq!(m.experiment_config().unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let m = Manifest::parse(
            "dataset_path = \"cohort\"\nseed = 11\nsampling_method = \"entropy\"\nnormalized = false\ngradient_clip = 0\neval_mode = \"patient\"\n",
        )
        .unwrap();
        let c = m.experiment_config().unwrap();
        assert_eq!(c.strategies, vec![Strategy::Entropy]);
        assert_eq!(c.seed, 11);
        assert!(!c.normalized);
        assert_eq!(c.gradient_clip, None);
        assert_eq!(c.eval_mode, EvalMode::Patient);
        assert_eq!(m.dataset_path, PathBuf::from("cohort"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Manifest::parse("sed = 1").is_err());
        assert!(Manifest::parse("sampling_method = \"random\"")
            .unwrap()
            .experiment_config()
            .is_err());
        assert!(Manifest::parse("initial_fraction = 0")
            .unwrap()
            .experiment_config()
            .is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let m = Manifest {
            seed: 5,
            sampling_method: "lc,margin".into(),
            ..Manifest::default()
        };
        assert_eq!(Manifest::parse(&m.to_toml()).unwrap(), m);
    }
}
