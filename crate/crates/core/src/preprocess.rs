//! Raw records to model-ready sequences: lab-order counts, bounded forward
//! fill with median fallback, and standardization.
//!
//! Feature column order is fixed: the 8 vitals and 26 labs in schema order,
//! then the 12-hour and 48-hour lab counts.

use serde::{Deserialize, Serialize};

use crate::data_ingest::{PatientRecord, RawColumnSchema};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par::{self, Parallelism};

pub const N_RAW_FEATURES: usize = 34;
pub const N_FEATURES: usize = 36;
pub const SHORT_COUNT_WINDOW: usize = 12;
pub const LONG_COUNT_WINDOW: usize = 48;
pub const SHORT_COUNT_NAME: &str = "LabCount12h";
pub const LONG_COUNT_NAME: &str = "LabCount48h";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub patient_id: String,
    pub matrix: Matrix,
    pub labels: Vec<bool>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_septic(&self) -> bool {
        self.labels.iter().any(|&y| y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImputationPolicy {
    pub vital_ffill_horizon: usize,
    pub lab_ffill_horizon: usize,
}

impl Default for ImputationPolicy {
    fn default() -> Self {
        Self {
            vital_ffill_horizon: 12,
            lab_ffill_horizon: 36,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weight_negative: f64,
    pub weight_positive: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        Self {
            weight_negative: 1.0,
            weight_positive: 1.0,
        }
    }

    #[inline]
    pub fn for_label(&self, y: bool) -> f64 {
        if y {
            self.weight_positive
        } else {
            self.weight_negative
        }
    }
}

/// Feature names in model column order.
pub fn feature_names(schema: &RawColumnSchema) -> Vec<String> {
    raw_feature_columns(schema)
        .map(|c| schema.names()[c].clone())
        .chain([SHORT_COUNT_NAME.to_string(), LONG_COUNT_NAME.to_string()])
        .collect()
}

fn raw_feature_columns(schema: &RawColumnSchema) -> impl Iterator<Item = usize> + '_ {
    schema
        .vital_indices()
        .iter()
        .chain(schema.lab_indices())
        .copied()
}

fn window_sums(per_hour: &[u32], window: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(per_hour.len());
    let mut acc = 0u32;
    for t in 0..per_hour.len() {
        acc += per_hour[t];
        if t >= window {
            acc -= per_hour[t - window];
        }
        out.push(acc);
    }
    out
}

/// Number of lab values recorded in the trailing 12-hour and 48-hour
/// windows, current hour included, clipped at admission. Must run on the
/// unimputed record.
pub fn engineer_lab_counts(
    record: &PatientRecord,
    schema: &RawColumnSchema,
) -> (Vec<u32>, Vec<u32>) {
    let per_hour: Vec<u32> = record
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
    (
        window_sums(&per_hour, SHORT_COUNT_WINDOW),
        window_sums(&per_hour, LONG_COUNT_WINDOW),
    )
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-column median of the observed vital and lab values across records.
/// A column never observed gets 0.
pub fn compute_medians(records: &[PatientRecord], schema: &RawColumnSchema) -> Vec<f64> {
    raw_feature_columns(schema)
        .map(|c| {
            let mut observed: Vec<f64> = records
                .iter()
                .flat_map(|r| r.rows.iter().filter_map(move |row| row.values[c]))
                .collect();
            median(&mut observed).unwrap_or(0.0)
        })
        .collect()
}

/// Forward fills vitals and labs within their horizons, then fills what is
/// left with `medians`. Returns a T×34 matrix.
pub fn impute(
    record: &PatientRecord,
    schema: &RawColumnSchema,
    policy: &ImputationPolicy,
    medians: &[f64],
) -> Result<Matrix> {
    if medians.len() != N_RAW_FEATURES {
        return Err(Error::Config(format!(
            "median vector has {} entries, expected {N_RAW_FEATURES}",
            medians.len()
        )));
    }
    let n_vitals = schema.vital_indices().len();
    let t_len = record.len();
    let mut out = Matrix::zeros(t_len, N_RAW_FEATURES);
    for (j, col) in raw_feature_columns(schema).enumerate() {
        let horizon = if j < n_vitals {
            policy.vital_ffill_horizon
        } else {
            policy.lab_ffill_horizon
        };
        let mut last: Option<(usize, f64)> = None;
        for t in 0..t_len {
            let v = match record.rows[t].values[col] {
                Some(v) => {
                    last = Some((t, v));
                    v
                }
                None => match last {
                    Some((t_obs, v)) if t - t_obs <= horizon => v,
                    _ => medians[j],
                },
            };
            out.set(t, j, v);
        }
    }
    Ok(out)
}

/// Unscaled T×36 feature matrix for one record.
pub fn build_features(
    record: &PatientRecord,
    schema: &RawColumnSchema,
    policy: &ImputationPolicy,
    medians: &[f64],
) -> Result<Matrix> {
    let (short, long) = engineer_lab_counts(record, schema);
    let raw = impute(record, schema, policy, medians)?;
    let mut out = Matrix::zeros(record.len(), N_FEATURES);
    for t in 0..record.len() {
        let row = out.row_mut(t);
        row[..N_RAW_FEATURES].copy_from_slice(raw.row(t));
        row[N_RAW_FEATURES] = f64::from(short[t]);
        row[N_RAW_FEATURES + 1] = f64::from(long[t]);
    }
    Ok(out)
}

/// Per-column mean and population standard deviation pooled over every row
/// of every matrix. Degenerate columns get scale 1.
pub fn fit_scaler(matrices: &[Matrix]) -> Result<ScalerParams> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Empty("no training matrices to fit scaler".into()))?;
    let cols = first.cols();
    let mut n = 0usize;
    let mut sum = vec![0.0; cols];
    for m in matrices {
        if m.cols() != cols {
            return Err(Error::Dimension {
                what: "scaler input columns",
                expected: cols,
                found: m.cols(),
            });
        }
        for r in 0..m.rows() {
            for (s, &x) in sum.iter_mut().zip(m.row(r)) {
                *s += x;
            }
        }
        n += m.rows();
    }
    if n == 0 {
        return Err(Error::Empty("scaler input has no rows".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0.0; cols];
    for m in matrices {
        for r in 0..m.rows() {
            for ((acc, &x), &mu) in sq.iter_mut().zip(m.row(r)).zip(&mean) {
                let d = x - mu;
                *acc += d * d;
            }
        }
    }
    let scale = sq
        .iter()
        .zip(&mean)
        .map(|(s, mu)| {
            let std = (s / n as f64).sqrt();
            if std.is_finite() && std > 1e-12 * mu.abs().max(1.0) {
                std
            } else {
                1.0
            }
        })
        .collect();
    Ok(ScalerParams { mean, scale })
}

pub fn apply_scaler(matrix: &Matrix, params: &ScalerParams) -> Result<Matrix> {
    check_scaler_dims(matrix, params)?;
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        for ((x, mu), s) in out
            .row_mut(r)
            .iter_mut()
            .zip(&params.mean)
            .zip(&params.scale)
        {
            *x = (*x - mu) / s;
        }
    }
    Ok(out)
}

pub fn invert_scaler(matrix: &Matrix, params: &ScalerParams) -> Result<Matrix> {
    check_scaler_dims(matrix, params)?;
    let mut out = matrix.clone();
    for r in 0..out.rows() {
        for ((x, mu), s) in out
            .row_mut(r)
            .iter_mut()
            .zip(&params.mean)
            .zip(&params.scale)
        {
            *x = *x * s + mu;
        }
    }
    Ok(out)
}

fn check_scaler_dims(matrix: &Matrix, params: &ScalerParams) -> Result<()> {
    if matrix.cols() != params.mean.len() || params.scale.len() != params.mean.len() {
        return Err(Error::Dimension {
            what: "scaler columns",
            expected: params.mean.len(),
            found: matrix.cols(),
        });
    }
    Ok(())
}

/// Balanced inverse-frequency weights over timestep labels: N / (2 N_c).
pub fn compute_class_weights<'a>(
    labels: impl IntoIterator<Item = &'a bool>,
) -> Result<ClassWeights> {
    let (mut pos, mut total) = (0usize, 0usize);
    for &y in labels {
        total += 1;
        pos += usize::from(y);
    }
    let neg = total - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("training labels"));
    }
    let n = total as f64;
    Ok(ClassWeights {
        weight_negative: n / (2.0 * neg as f64),
        weight_positive: n / (2.0 * pos as f64),
    })
}

/// Fitted preprocessing state: medians and scaler learned on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub schema: RawColumnSchema,
    pub policy: ImputationPolicy,
    pub medians: Vec<f64>,
    pub scaler: ScalerParams,
}

#[derive(Serialize, Deserialize)]
struct ColumnArtifact {
    name: String,
    mean: f64,
    scale: f64,
    median: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PreprocessorArtifact {
    schema: RawColumnSchema,
    policy: ImputationPolicy,
    columns: Vec<ColumnArtifact>,
}

impl Preprocessor {
    pub fn fit(
        records: &[PatientRecord],
        schema: &RawColumnSchema,
        policy: ImputationPolicy,
        mode: Parallelism,
    ) -> Result<Self> {
        let medians = compute_medians(records, schema);
        let matrices = par::try_map(mode, records, |r| {
            build_features(r, schema, &policy, &medians)
        })?;
        let scaler = fit_scaler(&matrices)?;
        Ok(Self {
            schema: schema.clone(),
            policy,
            medians,
            scaler,
        })
    }

    pub fn transform(&self, record: &PatientRecord) -> Result<FeatureSequence> {
        let raw = build_features(record, &self.schema, &self.policy, &self.medians)?;
        Ok(FeatureSequence {
            patient_id: record.patient_id.clone(),
            matrix: apply_scaler(&raw, &self.scaler)?,
            labels: record.labels.clone(),
        })
    }

    pub fn transform_all(
        &self,
        records: &[PatientRecord],
        mode: Parallelism,
    ) -> Result<Vec<FeatureSequence>> {
        par::try_map(mode, records, |r| self.transform(r))
    }

    pub fn feature_names(&self) -> Vec<String> {
        feature_names(&self.schema)
    }

    pub fn to_json(&self) -> Result<String> {
        let columns = self
            .feature_names()
            .into_iter()
            .enumerate()
            .map(|(j, name)| ColumnArtifact {
                name,
                mean: self.scaler.mean[j],
                scale: self.scaler.scale[j],
                median: self.medians.get(j).copied(),
            })
            .collect();
        let artifact = PreprocessorArtifact {
            schema: self.schema.clone(),
            policy: self.policy,
            columns,
        };
        Ok(serde_json::to_string_pretty(&artifact)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: PreprocessorArtifact = serde_json::from_str(text)?;
        // Re-validate the schema invariants after deserialization.
        let schema = RawColumnSchema::new(
            a.schema.names().to_vec(),
            a.schema.vital_indices().to_vec(),
            a.schema.lab_indices().to_vec(),
            a.schema.demographic_indices().to_vec(),
            a.schema.label_index(),
        )?;
        if a.columns.len() != N_FEATURES {
            return Err(Error::Dimension {
                what: "preprocessor columns",
                expected: N_FEATURES,
                found: a.columns.len(),
            });
        }
        let medians: Vec<f64> = a.columns[..N_RAW_FEATURES]
            .iter()
            .map(|c| {
                c.median
                    .ok_or_else(|| Error::Config(format!("column `{}` lacks a median", c.name)))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            schema,
            policy: a.policy,
            medians,
            scaler: ScalerParams {
                mean: a.columns.iter().map(|c| c.mean).collect(),
                scale: a.columns.iter().map(|c| c.scale).collect(),
            },
        })
    }
}
