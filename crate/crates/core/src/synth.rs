//! Deterministic synthetic ICU cohorts with a planted sepsis signal.
//!
//! Each vital and lab follows a stationary AR(1) process around a
//! clinically plausible mean. Septic patients get an onset hour after hour
//! 12; from onset on, six signal columns drift upward by
//! `signal_strength` standard deviations (ramping in over a few hours) and
//! the hourly label is 1. Cells are then masked with per-column
//! missingness probabilities.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data_ingest::{self, PatientRecord, RawColumnSchema, RawRow, MIN_HOURS};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::preprocess::N_RAW_FEATURES;
use crate::seed;

/// Columns that drift after onset.
pub const SIGNAL_COLUMNS: [&str; 6] = ["HR", "Temp", "Resp", "WBC", "Lactate", "BUN"];

/// Earliest onset hour for septic patients.
pub const MIN_ONSET_HOUR: usize = 13;

const ONSET_RAMP_HOURS: f64 = 4.0;

// (mean, sd) per vital/lab column, schema order.
const COLUMN_STATS: [(f64, f64); N_RAW_FEATURES] = [
    (84.0, 17.0),   // HR
    (97.0, 3.0),    // O2Sat
    (36.9, 0.7),    // Temp
    (123.0, 23.0),  // SBP
    (82.0, 16.0),   // MAP
    (63.0, 14.0),   // DBP
    (18.7, 5.0),    // Resp
    (33.0, 8.0),    // EtCO2
    (-0.7, 4.0),    // BaseExcess
    (24.0, 4.0),    // HCO3
    (0.55, 0.2),    // FiO2
    (7.38, 0.07),   // pH
    (41.0, 9.0),    // PaCO2
    (92.0, 6.0),    // SaO2
    (60.0, 40.0),   // AST
    (23.0, 15.0),   // BUN
    (100.0, 60.0),  // Alkalinephos
    (8.0, 1.5),     // Calcium
    (106.0, 6.0),   // Chloride
    (1.5, 1.0),     // Creatinine
    (1.0, 1.0),     // Bilirubin_direct
    (136.0, 51.0),  // Glucose
    (2.0, 1.5),     // Lactate
    (2.0, 0.4),     // Magnesium
    (3.5, 1.4),     // Phosphate
    (4.1, 0.6),     // Potassium
    (1.5, 1.5),     // Bilirubin_total
    (0.5, 1.0),     // TroponinI
    (30.8, 5.5),    // Hct
    (10.4, 2.0),    // Hgb
    (40.0, 15.0),   // PTT
    (11.0, 5.0),    // WBC
    (287.0, 150.0), // Fibrinogen
    (196.0, 103.0), // Platelets
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// Inclusive `[min_hours, max_hours]`.
    pub length_range: (usize, usize),
    pub positive_rate: f64,
    /// Probability that a cell is missing, one entry per vital/lab column.
    pub missingness: Vec<f64>,
    /// Post-onset drift of the signal columns, in standard deviations.
    pub signal_strength: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            seed: 0,
            length_range: (24, 72),
            positive_rate: 0.06,
            missingness: clinical_missingness(),
            signal_strength: 1.5,
        }
    }
}

/// Vitals mostly charted hourly, EtCO2 and labs sparse.
pub fn clinical_missingness() -> Vec<f64> {
    let mut m = vec![0.1; 8];
    m[7] = 0.9;
    m.extend(std::iter::repeat_n(0.85, N_RAW_FEATURES - 8));
    m
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if lo < MIN_HOURS || hi < lo {
            return Err(Error::Config(format!(
                "length range [{lo}, {hi}] must satisfy {MIN_HOURS} <= min <= max"
            )));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config(format!(
                "positive rate {} outside (0, 1)",
                self.positive_rate
            )));
        }
        if self.missingness.len() != N_RAW_FEATURES
            || self.missingness.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config(format!(
                "missingness needs {N_RAW_FEATURES} probabilities in [0, 1]"
            )));
        }
        if !(self.signal_strength >= 0.0 && self.signal_strength.is_finite()) {
            return Err(Error::Config(format!(
                "signal strength {} must be >= 0",
                self.signal_strength
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub signal_columns: Vec<String>,
    pub n_septic: usize,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn generate_patient(config: &SynthConfig, schema: &RawColumnSchema, index: usize) -> PatientRecord {
    let mut rng = seed::rng(config.seed, "synth-patient", index as u64);
    let (lo, hi) = config.length_range;
    let t_len = rng.gen_range(lo..=hi);
    let septic = rng.gen_bool(config.positive_rate);
    let onset = septic.then(|| rng.gen_range(MIN_ONSET_HOUR..t_len));

    let raw_cols: Vec<usize> = schema
        .vital_indices()
        .iter()
        .chain(schema.lab_indices())
        .copied()
        .collect();
    let signal: Vec<bool> = raw_cols
        .iter()
        .map(|&c| SIGNAL_COLUMNS.contains(&schema.names()[c].as_str()))
        .collect();

    let mut rows: Vec<RawRow> = (0..t_len)
        .map(|_| RawRow {
            values: vec![None; schema.len()],
        })
        .collect();

    for (j, &col) in raw_cols.iter().enumerate() {
        let (mean, sd) = COLUMN_STATS[j];
        let rho: f64 = if j < 8 { 0.8 } else { 0.95 };
        let innovation = (1.0 - rho * rho).sqrt();
        let mut dev: f64 = rng.sample::<f64, _>(StandardNormal);
        for (t, row) in rows.iter_mut().enumerate() {
            if t > 0 {
                dev = rho * dev + innovation * rng.sample::<f64, _>(StandardNormal);
            }
            let drift = match onset {
                Some(o) if signal[j] && t >= o => {
                    config.signal_strength * ((t - o + 1) as f64 / ONSET_RAMP_HOURS).min(1.0)
                }
                _ => 0.0,
            };
            let value = round2(mean + sd * (dev + drift));
            let missing = rng.gen_bool(config.missingness[j]);
            row.values[col] = (!missing).then_some(value);
        }
    }

    let age = rng.gen_range(18..=90) as f64;
    let gender = f64::from(u8::from(rng.gen_bool(0.55)));
    let unit1 = f64::from(u8::from(rng.gen_bool(0.5)));
    let hosp_adm = round2(-rng.gen_range(0.0..48.0));
    let demo_values = [age, gender, unit1, 1.0 - unit1, hosp_adm];
    let demo = schema.demographic_indices();
    let labels: Vec<bool> = (0..t_len).map(|t| onset.is_some_and(|o| t >= o)).collect();
    for (t, row) in rows.iter_mut().enumerate() {
        for (k, &col) in demo.iter().enumerate() {
            // ICULOS is the last demographic column: hours since admission, 1-based.
            row.values[col] = Some(if k < demo_values.len() {
                demo_values[k]
            } else {
                (t + 1) as f64
            });
        }
        row.values[schema.label_index()] = Some(if labels[t] { 1.0 } else { 0.0 });
    }

    PatientRecord {
        patient_id: format!("p{:06}", index + 1),
        rows,
        labels,
    }
}

/// Generates `config.n_patients` records in the challenge column layout.
pub fn generate_cohort(
    config: &SynthConfig,
    parallelism: Parallelism,
) -> Result<Vec<PatientRecord>> {
    config.validate()?;
    let schema = RawColumnSchema::physionet_2019();
    Ok(par::map_range(parallelism, config.n_patients, |i| {
        generate_patient(config, &schema, i)
    }))
}

/// Writes one `.psv` file per patient plus `manifest.json`.
pub fn write_cohort(dir: &Path, config: &SynthConfig, patients: &[PatientRecord]) -> Result<()> {
    let schema = RawColumnSchema::physionet_2019();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in patients {
        let path = dir.join(format!("{}.psv", p.patient_id));
        fs::write(&path, data_ingest::write_patient_file(p, &schema))
            .map_err(|e| Error::io(&path, e))?;
    }
    let manifest = SynthManifest {
        config: config.clone(),
        signal_columns: SIGNAL_COLUMNS.iter().map(|s| s.to_string()).collect(),
        n_septic: patients.iter().filter(|p| p.is_septic()).count(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_and_onsets_respect_config() {
        let cfg = SynthConfig {
            n_patients: 300,
            positive_rate: 0.3,
            ..SynthConfig::default()
        };
        let cohort = generate_cohort(&cfg, Parallelism::Parallel).unwrap();
        assert_eq!(cohort.len(), 300);
        for p in &cohort {
            assert!((24..=72).contains(&p.len()));
            if let Some(onset) = p.labels.iter().position(|&y| y) {
                assert!(onset >= MIN_ONSET_HOUR);
                assert!(p.labels[onset..].iter().all(|&y| y));
            }
        }
    }

    #[test]
    fn same_config_same_cohort() {
        let cfg = SynthConfig::default();
        let a = generate_cohort(&cfg, Parallelism::Parallel).unwrap();
        let b = generate_cohort(&cfg, Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&SynthConfig { seed: 1, ..cfg }, Parallelism::Parallel).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs_rejected() {
        let short = SynthConfig {
            length_range: (12, 40),
            ..SynthConfig::default()
        };
        assert!(short.validate().is_err());
        let bad_rate = SynthConfig {
            positive_rate: 1.0,
            ..SynthConfig::default()
        };
        assert!(bad_rate.validate().is_err());
        let bad_missing = SynthConfig {
            missingness: vec![0.1; 3],
            ..SynthConfig::default()
        };
        assert!(bad_missing.validate().is_err());
    }
}
