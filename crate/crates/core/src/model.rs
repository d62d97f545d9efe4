//! Single-layer Elman network with a sigmoid output at every timestep:
//!
//! ```text
//! h_0 = 0
//! h_t = tanh(W_xh x_t + W_hh h_{t-1} + b_h)
//! p_t = sigmoid(W_hy h_t + b_y)
//! ```
//!
//! Gradients are computed analytically by backpropagation through time and
//! applied with plain per-sequence SGD.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::preprocess::{ClassWeights, FeatureSequence};
use crate::seed;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-12;

pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_GRADIENT_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// H×D, row-major.
    pub w_xh: Vec<f64>,
    /// H×H, row-major.
    pub w_hh: Vec<f64>,
    pub b_h: Vec<f64>,
    /// 1×H.
    pub w_hy: Vec<f64>,
    pub b_y: f64,
}

impl ModelParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w_xh: vec![0.0; hidden_dim * input_dim],
            w_hh: vec![0.0; hidden_dim * hidden_dim],
            b_h: vec![0.0; hidden_dim],
            w_hy: vec![0.0; hidden_dim],
            b_y: 0.0,
        }
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases zero.
    pub fn init(input_dim: usize, hidden_dim: usize, rng_seed: u64) -> Result<Self> {
        if hidden_dim == 0 || input_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = seed::rng(rng_seed, "init", 0);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let w_xh = draw(hidden_dim * input_dim, input_dim);
        let w_hh = draw(hidden_dim * hidden_dim, hidden_dim);
        let w_hy = draw(hidden_dim, hidden_dim);
        Ok(Self {
            input_dim,
            hidden_dim,
            w_xh,
            w_hh,
            b_h: vec![0.0; hidden_dim],
            w_hy,
            b_y: 0.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let dims = [
            ("w_xh", h * d, self.w_xh.len()),
            ("w_hh", h * h, self.w_hh.len()),
            ("b_h", h, self.b_h.len()),
            ("w_hy", h, self.w_hy.len()),
        ];
        for (what, expected, found) in dims {
            if expected != found {
                return Err(Error::Dimension {
                    what,
                    expected,
                    found,
                });
            }
        }
        if !self.values().all(f64::is_finite) {
            return Err(Error::Numeric("model parameters".into()));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.w_xh.len() + self.w_hh.len() + self.b_h.len() + self.w_hy.len() + 1
    }

    /// All parameters in a fixed order: w_xh, w_hh, b_h, w_hy, b_y.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w_xh
            .iter()
            .chain(&self.w_hh)
            .chain(&self.b_h)
            .chain(&self.w_hy)
            .chain(std::iter::once(&self.b_y))
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_xh
            .iter_mut()
            .chain(self.w_hh.iter_mut())
            .chain(self.b_h.iter_mut())
            .chain(self.w_hy.iter_mut())
            .chain(std::iter::once(&mut self.b_y))
    }

    fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// T×H hidden states, h_1..h_T.
    pub hidden: Vec<f64>,
    pub probs: Vec<f64>,
}

fn check_input(params: &ModelParams, x: &Matrix) -> Result<()> {
    if x.cols() != params.input_dim {
        return Err(Error::Dimension {
            what: "input features",
            expected: params.input_dim,
            found: x.cols(),
        });
    }
    if x.rows() == 0 {
        return Err(Error::Empty("sequence has no timesteps".into()));
    }
    Ok(())
}

#[allow(clippy::needless_range_loop)]
pub fn forward_cached(params: &ModelParams, x: &Matrix) -> Result<ForwardCache> {
    check_input(params, x)?;
    let (d, h) = (params.input_dim, params.hidden_dim);
    let t_len = x.rows();
    let mut hidden = vec![0.0; t_len * h];
    let mut probs = Vec::with_capacity(t_len);
    let mut prev = vec![0.0; h];
    for t in 0..t_len {
        let xt = x.row(t);
        let cur = &mut hidden[t * h..(t + 1) * h];
        for i in 0..h {
            let wx = &params.w_xh[i * d..(i + 1) * d];
            let wh = &params.w_hh[i * h..(i + 1) * h];
            let mut a = params.b_h[i];
            for (w, v) in wx.iter().zip(xt) {
                a += w * v;
            }
            for (w, v) in wh.iter().zip(&prev) {
                a += w * v;
            }
            cur[i] = a.tanh();
        }
        let mut z = params.b_y;
        for (w, v) in params.w_hy.iter().zip(cur.iter()) {
            z += w * v;
        }
        if !z.is_finite() {
            return Err(Error::Numeric(format!("output logit at timestep {t}")));
        }
        probs.push(sigmoid(z));
        prev.copy_from_slice(cur);
    }
    Ok(ForwardCache { hidden, probs })
}

/// Per-timestep probability of the positive class; same length as the input.
pub fn forward(params: &ModelParams, x: &Matrix) -> Result<Vec<f64>> {
    Ok(forward_cached(params, x)?.probs)
}

fn check_lengths(probs: &[f64], labels: &[bool]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            what: "labels",
            expected: probs.len(),
            found: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::Empty("no timesteps to score".into()));
    }
    Ok(())
}

/// Class-weighted binary cross-entropy, averaged over timesteps.
pub fn loss(probs: &[f64], labels: &[bool], weights: &ClassWeights) -> Result<f64> {
    check_lengths(probs, labels)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -weights.weight_positive * p.ln()
            } else {
                -weights.weight_negative * (1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// Gradient of [`loss`] with respect to every parameter, plus the loss.
pub fn backward(
    params: &ModelParams,
    x: &Matrix,
    labels: &[bool],
    weights: &ClassWeights,
) -> Result<(ModelParams, f64)> {
    let cache = forward_cached(params, x)?;
    check_lengths(&cache.probs, labels)?;
    let value = loss(&cache.probs, labels, weights)?;
    let grad = backward_from_cache(params, x, labels, weights, &cache);
    if !grad.values().all(f64::is_finite) {
        return Err(Error::Numeric("gradient".into()));
    }
    Ok((grad, value))
}

#[allow(clippy::needless_range_loop)]
fn backward_from_cache(
    params: &ModelParams,
    x: &Matrix,
    labels: &[bool],
    weights: &ClassWeights,
    cache: &ForwardCache,
) -> ModelParams {
    let (d, h) = (params.input_dim, params.hidden_dim);
    let t_len = x.rows();
    let inv_t = 1.0 / t_len as f64;
    let mut g = ModelParams::zeros(d, h);
    // d loss / d a_{t+1}, carried backwards through W_hh.
    let mut da_next = vec![0.0; h];
    let mut dh = vec![0.0; h];
    let mut da = vec![0.0; h];
    for t in (0..t_len).rev() {
        let p = cache.probs[t];
        let dz = if labels[t] {
            -weights.weight_positive * (1.0 - p)
        } else {
            weights.weight_negative * p
        } * inv_t;
        let ht = &cache.hidden[t * h..(t + 1) * h];
        g.b_y += dz;
        for i in 0..h {
            g.w_hy[i] += dz * ht[i];
            dh[i] = dz * params.w_hy[i];
        }
        if t + 1 < t_len {
            for k in 0..h {
                let dak = da_next[k];
                if dak != 0.0 {
                    let row = &params.w_hh[k * h..(k + 1) * h];
                    for i in 0..h {
                        dh[i] += row[i] * dak;
                    }
                }
            }
        }
        for i in 0..h {
            da[i] = dh[i] * (1.0 - ht[i] * ht[i]);
        }
        let xt = x.row(t);
        for i in 0..h {
            let dai = da[i];
            g.b_h[i] += dai;
            let gx = &mut g.w_xh[i * d..(i + 1) * d];
            for (gj, xj) in gx.iter_mut().zip(xt) {
                *gj += dai * xj;
            }
            if t > 0 {
                let hprev = &cache.hidden[(t - 1) * h..t * h];
                let gh = &mut g.w_hh[i * h..(i + 1) * h];
                for (gj, hj) in gh.iter_mut().zip(hprev) {
                    *gj += dai * hj;
                }
            }
        }
        std::mem::swap(&mut da_next, &mut da);
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub gradient_clip: Option<f64>,
    pub class_weights: ClassWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 5,
            rng_seed: 0,
            gradient_clip: Some(DEFAULT_GRADIENT_CLIP),
            class_weights: ClassWeights::uniform(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        if let Some(c) = self.gradient_clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("gradient clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// One SGD step on a single sequence; returns the pre-update loss.
pub fn sgd_step(
    params: &mut ModelParams,
    seq: &FeatureSequence,
    config: &TrainConfig,
) -> Result<f64> {
    let (mut grad, value) = backward(params, &seq.matrix, &seq.labels, &config.class_weights)?;
    if let Some(clip) = config.gradient_clip {
        let norm = grad.norm();
        if norm > clip {
            grad.scale(clip / norm);
        }
    }
    let lr = config.learning_rate;
    for (p, g) in params.values_mut().zip(grad.values()) {
        *p -= lr * g;
    }
    if !params.values().all(f64::is_finite) {
        return Err(Error::Numeric("parameters after update".into()));
    }
    Ok(value)
}

/// One pass over `dataset` in an order shuffled by `(rng_seed, epoch)`.
/// Returns the mean per-sequence loss observed during the pass.
pub fn train_epoch(
    params: &mut ModelParams,
    dataset: &[&FeatureSequence],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed::rng(config.rng_seed, "shuffle", epoch as u64));
    let mut total = 0.0;
    for &i in &order {
        total += sgd_step(params, dataset[i], config).map_err(|e| Error::Training {
            epoch,
            sequence: i,
            source: Box::new(e),
        })?;
    }
    Ok(total / dataset.len() as f64)
}

/// Runs `config.epochs` epochs; returns the per-epoch mean losses.
pub fn train(
    params: &mut ModelParams,
    dataset: &[&FeatureSequence],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    (0..config.epochs)
        .map(|epoch| train_epoch(params, dataset, config, epoch))
        .collect()
}

/// Model checkpoint: dimensions, weights (row-major), seed and config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub train_config: TrainConfig,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.params.validate()?;
        Ok(c)
    }
}
