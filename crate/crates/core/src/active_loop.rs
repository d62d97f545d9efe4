//! Pool-based active learning over patients, the full-data baseline, and the
//! stratified cross-validation harness that compares them.
//!
//! A run starts with a stratified random fraction of the training patients
//! labeled. Each round trains one epoch on the labeled set (warm-starting
//! from the previous round), snapshots the model, then moves the most
//! uncertain unlabeled patients into the labeled set. The transfer quota is
//! measured against the full training-set size, and the last transfer takes
//! whatever remains, so the final round always trains on every patient.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data_ingest::{PatientRecord, RawColumnSchema};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalMode, EvalReport};
use crate::model::{self, ModelParams, TrainConfig};
use crate::par::{self, Parallelism};
use crate::preprocess::{
    self, ClassWeights, FeatureSequence, ImputationPolicy, Preprocessor, N_FEATURES,
};
use crate::sampling::{self, Strategy, UncertaintyScore};
use crate::seed;

pub const N_FOLDS: usize = 5;

// Tolerance when turning fractions of N into counts, so 0.6 * 100 is 60.
const COUNT_EPS: f64 = 1e-9;

fn fraction_count(fraction: f64, n: usize) -> usize {
    (((fraction * n as f64) - COUNT_EPS).ceil().max(0.0) as usize).min(n)
}

/// Stratified fold assignment at the patient level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub fold_assignments: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        N_FOLDS
    }

    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.fold_assignments.get(patient_id).copied()
    }

    pub fn test_ids(&self, fold: usize) -> BTreeSet<String> {
        self.fold_assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.clone())
            .collect()
    }
}

/// Splits patients into 5 folds, stratified by patient-level outcome.
/// `patients` pairs each id with whether the patient is septic.
pub fn make_folds_from_labels(patients: &[(String, bool)], seed_value: u64) -> Result<FoldPlan> {
    let mut pos: Vec<&String> = patients
        .iter()
        .filter(|(_, y)| *y)
        .map(|(id, _)| id)
        .collect();
    let mut neg: Vec<&String> = patients
        .iter()
        .filter(|(_, y)| !*y)
        .map(|(id, _)| id)
        .collect();
    if pos.len() < N_FOLDS || neg.len() < N_FOLDS {
        return Err(Error::Config(format!(
            "need at least {N_FOLDS} patients of each class for {N_FOLDS}-fold splitting, have {} septic and {} nonseptic",
            pos.len(),
            neg.len()
        )));
    }
    pos.sort();
    neg.sort();
    let mut rng = seed::rng(seed_value, "folds", 0);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut fold_assignments = BTreeMap::new();
    // Deal both classes round-robin from one running counter so overall fold
    // sizes also differ by at most one.
    for (i, id) in pos.iter().chain(neg.iter()).enumerate() {
        if fold_assignments
            .insert((*id).clone(), i % N_FOLDS)
            .is_some()
        {
            return Err(Error::Config(format!("duplicate patient id `{id}`")));
        }
    }
    Ok(FoldPlan {
        fold_assignments,
        seed: seed_value,
    })
}

pub fn make_folds(cohort: &[PatientRecord], seed_value: u64) -> Result<FoldPlan> {
    let labels: Vec<(String, bool)> = cohort
        .iter()
        .map(|p| (p.patient_id.clone(), p.is_septic()))
        .collect();
    make_folds_from_labels(&labels, seed_value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTransfer {
    /// Round whose end-of-round model produced the scores.
    pub round: usize,
    /// Transferred patients, most uncertain first.
    pub transferred: Vec<UncertaintyScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    pub labeled: BTreeSet<String>,
    pub unlabeled: BTreeSet<String>,
    /// Number of transfers performed so far.
    pub round: usize,
    pub history: Vec<RoundTransfer>,
}

impl PoolState {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transfer(&mut self, round: usize, picked: Vec<UncertaintyScore>) -> Result<()> {
        for s in &picked {
            if !self.unlabeled.remove(&s.patient_id) {
                return Err(Error::Config(format!(
                    "patient `{}` is not in the unlabeled pool",
                    s.patient_id
                )));
            }
            self.labeled.insert(s.patient_id.clone());
        }
        self.round += 1;
        self.history.push(RoundTransfer {
            round,
            transferred: picked,
        });
        Ok(())
    }

    /// `round,patient_id,score` rows with a header line.
    pub fn transfers_csv(&self) -> String {
        let mut out = String::from("round,patient_id,score\n");
        for h in &self.history {
            for s in &h.transferred {
                out.push_str(&format!("{},{},{}\n", h.round, s.patient_id, s.score));
            }
        }
        out
    }
}

/// Labels a stratified random `fraction` of the training patients.
pub fn seed_pool(training: &[(String, bool)], fraction: f64, seed_value: u64) -> Result<PoolState> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "initial fraction {fraction} outside (0, 1]"
        )));
    }
    let n = training.len();
    let total = fraction_count(fraction, n);
    let mut pos: Vec<&String> = training
        .iter()
        .filter(|(_, y)| *y)
        .map(|(id, _)| id)
        .collect();
    let mut neg: Vec<&String> = training
        .iter()
        .filter(|(_, y)| !*y)
        .map(|(id, _)| id)
        .collect();
    pos.sort();
    neg.sort();
    let mut rng = seed::rng(seed_value, "pool", 0);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let n_pos = if n == 0 {
        0
    } else {
        ((total * pos.len()) as f64 / n as f64).round() as usize
    };
    let n_pos = n_pos.min(pos.len()).max(total.saturating_sub(neg.len()));
    let n_neg = total - n_pos;
    let labeled: BTreeSet<String> = pos[..n_pos]
        .iter()
        .chain(&neg[..n_neg])
        .map(|s| (*s).clone())
        .collect();
    let unlabeled: BTreeSet<String> = training
        .iter()
        .map(|(id, _)| id.clone())
        .filter(|id| !labeled.contains(id))
        .collect();
    if labeled.len() + unlabeled.len() != n {
        return Err(Error::Config(
            "duplicate patient ids in training set".into(),
        ));
    }
    Ok(PoolState {
        labeled,
        unlabeled,
        round: 0,
        history: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    /// Use the length-normalized scorers.
    pub normalized: bool,
    pub initial_fraction: f64,
    pub increment: f64,
    pub rounds: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub gradient_clip: Option<f64>,
    pub seed: u64,
    /// Continue from the previous round's weights rather than re-initializing.
    pub warm_start: bool,
    pub include_baseline: bool,
    pub eval_mode: EvalMode,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            normalized: true,
            initial_fraction: 0.2,
            increment: 0.2,
            rounds: 5,
            hidden_dim: model::DEFAULT_HIDDEN_DIM,
            learning_rate: 0.01,
            gradient_clip: Some(model::DEFAULT_GRADIENT_CLIP),
            seed: 0,
            warm_start: true,
            include_baseline: true,
            eval_mode: EvalMode::Timestep,
            threshold: metrics::DEFAULT_THRESHOLD,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "initial fraction {} outside (0, 1]",
                self.initial_fraction
            )));
        }
        if !(self.increment > 0.0 && self.increment <= 1.0) {
            return Err(Error::Config(format!(
                "increment {} outside (0, 1]",
                self.increment
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.learning_rate
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }

    /// Labeled fraction trained on in `round` (0-based); the last round is
    /// always 1.
    pub fn fraction_level(&self, round: usize) -> f64 {
        if round + 1 >= self.rounds {
            1.0
        } else {
            // Rounded to 1e-9 so 0.2 + 2 * 0.2 reads as 0.6 in reports.
            let level = self.initial_fraction + round as f64 * self.increment;
            ((level * 1e9).round() / 1e9).min(1.0)
        }
    }

    /// Labeled count trained on in `round` for a training set of size `n`.
    pub fn labeled_target(&self, round: usize, n: usize) -> usize {
        fraction_count(self.fraction_level(round), n)
    }

    pub fn train_config(&self, weights: ClassWeights) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.rounds,
            rng_seed: seed::derive(self.seed, "shuffle", 0),
            gradient_clip: self.gradient_clip,
            class_weights: weights,
        }
    }

    pub fn init_seed(&self) -> u64 {
        seed::derive(self.seed, "init", 0)
    }

    pub fn pool_seed(&self) -> u64 {
        seed::derive(self.seed, "pool", 0)
    }

    fn initial_params(&self) -> Result<ModelParams> {
        ModelParams::init(N_FEATURES, self.hidden_dim, self.init_seed())
    }
}

/// Model state at the end of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub round: usize,
    pub fraction_level: f64,
    pub labeled_count: usize,
    pub params: ModelParams,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlrtRun {
    pub strategy: Strategy,
    pub params: ModelParams,
    pub pool: PoolState,
    pub snapshots: Vec<Snapshot>,
}

fn index_by_id(train: &[FeatureSequence]) -> Result<HashMap<&str, &FeatureSequence>> {
    let mut map = HashMap::with_capacity(train.len());
    for s in train {
        if map.insert(s.patient_id.as_str(), s).is_some() {
            return Err(Error::Config(format!(
                "duplicate patient id `{}`",
                s.patient_id
            )));
        }
    }
    Ok(map)
}

fn select<'a>(
    ids: &BTreeSet<String>,
    by_id: &HashMap<&str, &'a FeatureSequence>,
) -> Vec<&'a FeatureSequence> {
    ids.iter().map(|id| by_id[id.as_str()]).collect()
}

fn sorted_refs(train: &[FeatureSequence]) -> Vec<&FeatureSequence> {
    let mut refs: Vec<&FeatureSequence> = train.iter().collect();
    refs.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    refs
}

/// Runs the active-learning protocol with `strategy` on preprocessed
/// training sequences.
pub fn run_alrt(
    train: &[FeatureSequence],
    strategy: Strategy,
    config: &ExperimentConfig,
    weights: ClassWeights,
    parallelism: Parallelism,
) -> Result<AlrtRun> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    let by_id = index_by_id(train)?;
    let n = train.len();
    let labels: Vec<(String, bool)> = train
        .iter()
        .map(|s| (s.patient_id.clone(), s.is_septic()))
        .collect();
    let mut pool = seed_pool(&labels, config.initial_fraction, config.pool_seed())?;
    let method = strategy.method(config.normalized);
    let train_cfg = config.train_config(weights);
    let mut params = config.initial_params()?;
    let mut snapshots = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        if round > 0 && !config.warm_start {
            params = config.initial_params()?;
        }
        let labeled = select(&pool.labeled, &by_id);
        let train_loss =
            model::train_epoch(&mut params, &labeled, &train_cfg, round).map_err(wrap)?;
        snapshots.push(Snapshot {
            round,
            fraction_level: config.fraction_level(round),
            labeled_count: pool.labeled.len(),
            params: params.clone(),
            train_loss,
        });

        if round + 1 == config.rounds || pool.unlabeled.is_empty() {
            continue;
        }
        let target = config.labeled_target(round + 1, n);
        let k = target
            .saturating_sub(pool.labeled.len())
            .min(pool.unlabeled.len());
        let candidates = select(&pool.unlabeled, &by_id);
        let scores =
            sampling::score_pool(&params, &candidates, method, parallelism).map_err(wrap)?;
        let picked = sampling::select_top(&scores, k).map_err(wrap)?;
        pool.transfer(round, picked).map_err(wrap)?;
    }

    Ok(AlrtRun {
        strategy,
        params,
        pool,
        snapshots,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRun {
    pub params: ModelParams,
    pub epoch_losses: Vec<f64>,
}

/// Trains on every training patient for `config.rounds` epochs with the same
/// initialization and shuffling streams as [`run_alrt`].
pub fn run_baseline(
    train: &[FeatureSequence],
    config: &ExperimentConfig,
    weights: ClassWeights,
) -> Result<BaselineRun> {
    config.validate()?;
    index_by_id(train)?;
    let refs = sorted_refs(train);
    let mut params = config.initial_params()?;
    let epoch_losses = model::train(&mut params, &refs, &config.train_config(weights))?;
    Ok(BaselineRun {
        params,
        epoch_losses,
    })
}

/// Mean class-weighted loss per test patient.
pub fn mean_test_loss(
    params: &ModelParams,
    test: &[&FeatureSequence],
    weights: &ClassWeights,
    parallelism: Parallelism,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set is empty".into()));
    }
    let losses = par::try_map(parallelism, test, |s| {
        let probs = model::forward(params, &s.matrix)?;
        model::loss(&probs, &s.labels, weights)
    })?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEval {
    pub fraction_level: f64,
    pub report: EvalReport,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub run: AlrtRun,
    pub evals: Vec<SnapshotEval>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub preprocessor: Preprocessor,
    pub class_weights: ClassWeights,
    pub baseline: Option<(BaselineRun, SnapshotEval)>,
    pub strategies: Vec<StrategyResult>,
}

/// One row of the fold-averaged results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub model_id: String,
    /// `None` for the full-data baseline.
    pub strategy: Option<Strategy>,
    pub fraction_level: f64,
    pub per_fold: Vec<EvalReport>,
    pub per_fold_test_loss: Vec<f64>,
    /// Fold means in table column order.
    pub mean: [f64; 6],
    pub mean_test_loss: f64,
}

impl ModelRow {
    pub fn mean_auroc(&self) -> f64 {
        self.mean[4]
    }

    pub fn mean_auprc(&self) -> f64 {
        self.mean[5]
    }
}

pub fn model_id(strategy: Option<Strategy>, fraction_level: f64) -> String {
    match strategy {
        None => "RNN".to_string(),
        Some(s) => format!(
            "RNN_{}{}",
            (fraction_level * 100.0).round() as u64,
            s.suffix()
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub plan: FoldPlan,
    pub folds: Vec<FoldResult>,
    pub rows: Vec<ModelRow>,
}

fn evaluate_snapshot(
    params: &ModelParams,
    fraction_level: f64,
    test: &[&FeatureSequence],
    weights: &ClassWeights,
    config: &ExperimentConfig,
    parallelism: Parallelism,
) -> Result<SnapshotEval> {
    Ok(SnapshotEval {
        fraction_level,
        report: metrics::evaluate(
            params,
            test,
            config.threshold,
            config.eval_mode,
            parallelism,
        )?,
        test_loss: mean_test_loss(params, test, weights, parallelism)?,
    })
}

/// Fits preprocessing on the training folds, runs the baseline and every
/// configured strategy, and evaluates each round's snapshot on `fold`.
pub fn run_fold(
    cohort: &[PatientRecord],
    schema: &RawColumnSchema,
    plan: &FoldPlan,
    fold: usize,
    config: &ExperimentConfig,
    parallelism: Parallelism,
) -> Result<FoldResult> {
    let (train_records, test_records): (Vec<PatientRecord>, Vec<PatientRecord>) = cohort
        .iter()
        .cloned()
        .partition(|p| plan.fold_of(&p.patient_id) != Some(fold));
    let pre = Preprocessor::fit(
        &train_records,
        schema,
        ImputationPolicy::default(),
        parallelism,
    )?;
    let train = pre.transform_all(&train_records, parallelism)?;
    let test = pre.transform_all(&test_records, parallelism)?;
    let weights = preprocess::compute_class_weights(train.iter().flat_map(|s| s.labels.iter()))?;
    let test_refs: Vec<&FeatureSequence> = test.iter().collect();

    let fold_config = ExperimentConfig {
        seed: seed::derive(config.seed, "fold", fold as u64),
        ..config.clone()
    };

    let baseline = if config.include_baseline {
        let run = run_baseline(&train, &fold_config, weights)?;
        let eval = evaluate_snapshot(&run.params, 1.0, &test_refs, &weights, config, parallelism)?;
        Some((run, eval))
    } else {
        None
    };

    let mut strategies = Vec::with_capacity(config.strategies.len());
    for &strategy in &config.strategies {
        let run = run_alrt(&train, strategy, &fold_config, weights, parallelism)?;
        let evals = run
            .snapshots
            .iter()
            .map(|s| {
                evaluate_snapshot(
                    &s.params,
                    s.fraction_level,
                    &test_refs,
                    &weights,
                    config,
                    parallelism,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        strategies.push(StrategyResult { run, evals });
    }

    Ok(FoldResult {
        fold,
        train_ids: train_records.into_iter().map(|p| p.patient_id).collect(),
        test_ids: test_records.into_iter().map(|p| p.patient_id).collect(),
        preprocessor: pre,
        class_weights: weights,
        baseline,
        strategies,
    })
}

fn mean_row(
    model_id: String,
    strategy: Option<Strategy>,
    fraction_level: f64,
    evals: Vec<&SnapshotEval>,
) -> ModelRow {
    let k = evals.len() as f64;
    let mut mean = [0.0; 6];
    for e in &evals {
        for (m, v) in mean.iter_mut().zip(e.report.table_values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let per_fold_test_loss: Vec<f64> = evals.iter().map(|e| e.test_loss).collect();
    ModelRow {
        model_id,
        strategy,
        fraction_level,
        per_fold: evals.iter().map(|e| e.report.clone()).collect(),
        mean_test_loss: per_fold_test_loss.iter().sum::<f64>() / k,
        per_fold_test_loss,
        mean,
    }
}

/// Builds the fold-averaged table: strategy rows by increasing fraction in
/// configured strategy order, then the baseline.
pub fn summarize(config: &ExperimentConfig, folds: &[FoldResult]) -> Vec<ModelRow> {
    let mut rows = Vec::new();
    for (si, &strategy) in config.strategies.iter().enumerate() {
        for round in 0..config.rounds {
            let level = config.fraction_level(round);
            let evals: Vec<&SnapshotEval> = folds
                .iter()
                .filter_map(|f| f.strategies[si].evals.get(round))
                .collect();
            rows.push(mean_row(
                model_id(Some(strategy), level),
                Some(strategy),
                level,
                evals,
            ));
        }
    }
    if config.include_baseline {
        let evals: Vec<&SnapshotEval> = folds
            .iter()
            .filter_map(|f| f.baseline.as_ref().map(|(_, e)| e))
            .collect();
        rows.push(mean_row(model_id(None, 1.0), None, 1.0, evals));
    }
    rows
}

/// 5-fold stratified cross-validation of every configured strategy and the
/// baseline. Folds run in parallel when `parallelism` allows.
pub fn run_cross_validation(
    cohort: &[PatientRecord],
    schema: &RawColumnSchema,
    config: &ExperimentConfig,
    parallelism: Parallelism,
) -> Result<CrossValidation> {
    config.validate()?;
    let plan = make_folds(cohort, seed::derive(config.seed, "folds", 0))?;
    let folds = par::try_map_range(parallelism, N_FOLDS, |fold| {
        run_fold(cohort, schema, &plan, fold, config, parallelism).map_err(|e| Error::Fold {
            fold,
            source: Box::new(e),
        })
    })?;
    let rows = summarize(config, &folds);
    Ok(CrossValidation { plan, folds, rows })
}
