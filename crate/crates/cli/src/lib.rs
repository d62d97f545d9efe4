//! Command-line front end: `ingest`, `synth`, `experiment`, `evaluate`,
//! `explain` and `report`.
//!
//! Every command is deterministic given its inputs; run directories contain
//! no timestamps.

pub mod manifest;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use alrt_core::active_loop::{self, ExperimentConfig, FoldPlan, FoldResult, ModelRow, N_FOLDS};
use alrt_core::data_ingest::{self, RawColumnSchema};
use alrt_core::explain;
use alrt_core::metrics::{self, EvalMode, EvalReport};
use alrt_core::model::Checkpoint;
use alrt_core::par;
use alrt_core::preprocess::{FeatureSequence, Preprocessor};
use alrt_core::synth::{self, SynthConfig};
use alrt_core::{seed, ErrorKind, Parallelism};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use manifest::Manifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] alrt_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 I/O, 2 parse, 3 config, 4 numeric, 64 usage.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Io => 1,
                ErrorKind::Parse => 2,
                ErrorKind::Config => 3,
                ErrorKind::Numeric => 4,
            },
            CliError::Io { .. } => 1,
            CliError::Config(_) => 3,
            CliError::Usage(_) => 64,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "alrt",
    version,
    about = "Active learning with recurrent networks on ICU time series"
)]
pub struct Cli {
    /// Disable data parallelism.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a directory of .psv files and report cohort counts.
    Ingest(IngestArgs),
    /// Write a synthetic cohort of .psv files.
    Synth(SynthArgs),
    /// Cross-validated active-learning experiment.
    Experiment(ExperimentArgs),
    /// Evaluate a checkpoint on a dataset or one test fold.
    Evaluate(EvaluateArgs),
    /// Permutation feature importance of a checkpoint.
    Explain(ExplainArgs),
    /// Render the tables of an experiment run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Write the retained cohort as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub patients: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.06)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 1.5)]
    pub signal: f64,
    #[arg(long, default_value_t = 24)]
    pub min_hours: usize,
    #[arg(long, default_value_t = 72)]
    pub max_hours: usize,
    /// Use one missingness probability for every column.
    #[arg(long)]
    pub missingness: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ExperimentArgs {
    /// Flat key-value manifest; flags below override its keys.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `all` or a comma-separated subset of lc, margin, entropy.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub normalized: Option<bool>,
    #[arg(long)]
    pub initial_fraction: Option<f64>,
    #[arg(long)]
    pub increment: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// 0 disables clipping.
    #[arg(long)]
    pub gradient_clip: Option<f64>,
    #[arg(long)]
    pub warm_start: Option<bool>,
    #[arg(long)]
    pub include_baseline: Option<bool>,
    /// `timestep` or `patient`.
    #[arg(long)]
    pub eval_mode: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Model inputs shared by `evaluate` and `explain`.
#[derive(Debug, Args)]
pub struct ModelInputs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub preprocessor: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `folds.csv` of an experiment run; with `--fold`, restricts to that test fold.
    #[arg(long, requires = "fold")]
    pub folds: Option<PathBuf>,
    #[arg(long, requires = "folds")]
    pub fold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long, default_value = "timestep")]
    pub mode: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Row label in the output table.
    #[arg(long, default_value = "RNN")]
    pub model_id: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Output directory for importance.csv, importance.json, importance.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment output directory.
    #[arg(long)]
    pub run: PathBuf,
}

/// Parses `args` (including the program name) and runs the command,
/// writing human-readable output to `stdout`. Returns the exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { 64 } else { 0 };
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let parallelism = if cli.sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a, parallelism, stdout),
        Command::Synth(a) => cmd_synth(&a, parallelism, stdout),
        Command::Experiment(a) => cmd_experiment(&a, parallelism, stdout).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a, parallelism, stdout),
        Command::Explain(a) => cmd_explain(&a, parallelism, stdout),
        Command::Report(a) => cmd_report(&a, stdout),
    }
}

fn out_io(e: std::io::Error) -> CliError {
    CliError::io(Path::new("<stdout>"), e)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} `{}` is not a directory",
            path.display()
        )))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{what} `{}` does not exist",
            path.display()
        )))
    }
}

pub fn cmd_ingest(
    args: &IngestArgs,
    parallelism: Parallelism,
    stdout: &mut dyn Write,
) -> Result<()> {
    require_dir(&args.data, "dataset")?;
    let cohort =
        data_ingest::load_cohort(&args.data, &RawColumnSchema::physionet_2019(), parallelism)?;
    writeln!(
        stdout,
        "{} retained ({} septic), {} dropped",
        cohort.patients.len(),
        cohort.septic_count(),
        cohort.dropped
    )
    .map_err(out_io)?;
    if let Some(out) = &args.out {
        let mut buf = Vec::new();
        data_ingest::write_jsonl(&mut buf, &cohort.patients)?;
        write_file(out, buf)?;
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, parallelism: Parallelism, stdout: &mut dyn Write) -> Result<()> {
    let mut config = SynthConfig {
        n_patients: args.patients,
        seed: args.seed,
        length_range: (args.min_hours, args.max_hours),
        positive_rate: args.positive_rate,
        signal_strength: args.signal,
        ..SynthConfig::default()
    };
    if let Some(m) = args.missingness {
        config.missingness.iter_mut().for_each(|p| *p = m);
    }
    let patients = synth::generate_cohort(&config, parallelism)?;
    synth::write_cohort(&args.out, &config, &patients)?;
    writeln!(
        stdout,
        "{} patients ({} septic) written to {}",
        patients.len(),
        patients.iter().filter(|p| p.is_septic()).count(),
        args.out.display()
    )
    .map_err(out_io)?;
    Ok(())
}

/// Applies command-line overrides on top of a manifest (or the defaults).
pub fn resolve_manifest(args: &ExperimentArgs) -> Result<Manifest> {
    let mut m = match &args.manifest {
        Some(path) => Manifest::load(path)?,
        None => Manifest::default(),
    };
    macro_rules! take {
        ($($field:ident <- $arg:ident),* $(,)?) => {
            $(if let Some(v) = &args.$arg { m.$field = v.clone(); })*
        };
    }
    take!(
        dataset_path <- data,
        output_dir <- out,
        seed <- seed,
        sampling_method <- method,
        normalized <- normalized,
        initial_fraction <- initial_fraction,
        increment <- increment,
        rounds <- rounds,
        hidden_dim <- hidden_dim,
        learning_rate <- learning_rate,
        gradient_clip <- gradient_clip,
        warm_start <- warm_start,
        include_baseline <- include_baseline,
        eval_mode <- eval_mode,
        threshold <- threshold,
    );
    Ok(m)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model_id: String,
    pub method: String,
    pub fraction: f64,
    pub specificity: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub mean_test_loss: f64,
    pub per_fold: Vec<EvalReport>,
    pub per_fold_test_loss: Vec<f64>,
}

impl From<&ModelRow> for MetricsRow {
    fn from(r: &ModelRow) -> Self {
        let [specificity, sensitivity, precision, accuracy, auroc, auprc] = r.mean;
        Self {
            model_id: r.model_id.clone(),
            method: method_name(r),
            fraction: r.fraction_level,
            specificity,
            sensitivity,
            precision,
            accuracy,
            auroc,
            auprc,
            mean_test_loss: r.mean_test_loss,
            per_fold: r.per_fold.clone(),
            per_fold_test_loss: r.per_fold_test_loss.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    pub manifest: Manifest,
    pub seed: u64,
    pub n_patients: usize,
    pub n_septic: usize,
    pub rows: Vec<MetricsRow>,
}

fn method_name(row: &ModelRow) -> String {
    row.strategy
        .map_or_else(|| "baseline".to_string(), |s| s.name().to_string())
}

pub fn metrics_csv(rows: &[ModelRow]) -> String {
    let mut out = format!("{}\n", EvalReport::csv_header());
    for r in rows {
        out.push_str(&metrics::csv_row(&r.model_id, &r.mean));
        out.push('\n');
    }
    out
}

pub fn curves_csv(rows: &[ModelRow], seed_value: u64) -> String {
    let mut out = String::from("method,labeled_fraction,auroc,auprc,mean_test_loss,seed\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            method_name(r),
            r.fraction_level,
            r.mean_auroc(),
            r.mean_auprc(),
            r.mean_test_loss,
            seed_value
        );
    }
    out
}

fn folds_csv(plan: &FoldPlan) -> String {
    let mut out = String::from("patient_id,fold\n");
    for (id, fold) in &plan.fold_assignments {
        let _ = writeln!(out, "{id},{fold}");
    }
    out
}

fn read_folds_csv(path: &Path) -> Result<FoldPlan> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut plan = FoldPlan {
        fold_assignments: Default::default(),
        seed: 0,
    };
    for (i, line) in text.lines().enumerate().skip(1) {
        let parsed = line
            .split_once(',')
            .and_then(|(id, f)| f.trim().parse::<usize>().ok().map(|f| (id.to_string(), f)));
        match parsed {
            Some((id, f)) => {
                plan.fold_assignments.insert(id, f);
            }
            None => {
                return Err(CliError::Config(format!(
                    "{}: line {} is not `patient_id,fold`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(plan)
}

fn fold_dir_name(fold: usize) -> String {
    format!("fold{fold}")
}

fn write_fold(
    out_dir: &Path,
    fold: &FoldResult,
    config: &ExperimentConfig,
    root_seed: u64,
) -> Result<()> {
    let final_dir = out_dir.join(fold_dir_name(fold.fold));
    let tmp_dir = out_dir.join(format!(".{}.partial", fold_dir_name(fold.fold)));
    if tmp_dir.exists() {
        fs::remove_dir_all(&tmp_dir).map_err(|e| CliError::io(&tmp_dir, e))?;
    }
    let ckpt_dir = tmp_dir.join("checkpoints");
    create_dir(&ckpt_dir)?;

    let fold_seed = seed::derive(root_seed, "fold", fold.fold as u64);
    let train_config = ExperimentConfig {
        seed: fold_seed,
        ..config.clone()
    }
    .train_config(fold.class_weights);
    let checkpoint = |params: &alrt_core::model::ModelParams| Checkpoint {
        params: params.clone(),
        seed: fold_seed,
        train_config: train_config.clone(),
    };

    write_file(
        &tmp_dir.join("preprocessor.json"),
        fold.preprocessor.to_json()?,
    )?;
    let mut table = format!("{}\n", EvalReport::csv_header());
    for s in &fold.strategies {
        for (snap, eval) in s.run.snapshots.iter().zip(&s.evals) {
            let id = active_loop::model_id(Some(s.run.strategy), snap.fraction_level);
            table.push_str(&eval.report.csv_row(&id));
            table.push('\n');
            write_file(
                &ckpt_dir.join(format!("{id}.json")),
                checkpoint(&snap.params).to_json()?,
            )?;
        }
        write_file(
            &tmp_dir.join(format!("transfers_{}.csv", s.run.strategy.name())),
            s.run.pool.transfers_csv(),
        )?;
    }
    if let Some((run, eval)) = &fold.baseline {
        let id = active_loop::model_id(None, 1.0);
        table.push_str(&eval.report.csv_row(&id));
        table.push('\n');
        write_file(
            &ckpt_dir.join(format!("{id}.json")),
            checkpoint(&run.params).to_json()?,
        )?;
    }
    write_file(&tmp_dir.join("metrics.csv"), table)?;

    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| CliError::io(&final_dir, e))?;
    }
    fs::rename(&tmp_dir, &final_dir).map_err(|e| CliError::io(&final_dir, e))
}

/// Runs the full cross-validated experiment and writes the run directory.
/// Fold directories are committed one by one as each fold finishes.
pub fn cmd_experiment(
    args: &ExperimentArgs,
    parallelism: Parallelism,
    stdout: &mut dyn Write,
) -> Result<Vec<ModelRow>> {
    let manifest = resolve_manifest(args)?;
    let config = manifest.experiment_config()?;
    require_dir(&manifest.dataset_path, "dataset")?;
    let schema = RawColumnSchema::physionet_2019();
    let cohort = data_ingest::load_cohort(&manifest.dataset_path, &schema, parallelism)?;
    let out_dir = &manifest.output_dir;
    create_dir(out_dir)?;
    write_file(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(alrt_core::Error::from)?,
    )?;

    let plan = active_loop::make_folds(&cohort.patients, seed::derive(config.seed, "folds", 0))?;
    write_file(&out_dir.join("folds.csv"), folds_csv(&plan))?;

    let folds = par::try_map_range(parallelism, N_FOLDS, |fold| -> Result<FoldResult> {
        let result =
            active_loop::run_fold(&cohort.patients, &schema, &plan, fold, &config, parallelism)
                .map_err(|e| alrt_core::Error::Fold {
                    fold,
                    source: Box::new(e),
                })?;
        write_fold(out_dir, &result, &config, config.seed)?;
        Ok(result)
    })?;
    let rows = active_loop::summarize(&config, &folds);

    write_file(&out_dir.join("metrics.csv"), metrics_csv(&rows))?;
    write_file(&out_dir.join("curves.csv"), curves_csv(&rows, config.seed))?;
    let file = MetricsFile {
        manifest: manifest.clone(),
        seed: config.seed,
        n_patients: cohort.patients.len(),
        n_septic: cohort.septic_count(),
        rows: rows.iter().map(MetricsRow::from).collect(),
    };
    write_file(
        &out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&file).map_err(alrt_core::Error::from)?,
    )?;
    writeln!(
        stdout,
        "{} patients ({} septic), {} model rows written to {}",
        cohort.patients.len(),
        cohort.septic_count(),
        rows.len(),
        out_dir.display()
    )
    .map_err(out_io)?;
    Ok(rows)
}

struct LoadedModel {
    checkpoint: Checkpoint,
    preprocessor: Preprocessor,
    sequences: Vec<FeatureSequence>,
}

fn load_model_inputs(inputs: &ModelInputs, parallelism: Parallelism) -> Result<LoadedModel> {
    require_file(&inputs.checkpoint, "checkpoint")?;
    require_file(&inputs.preprocessor, "preprocessor")?;
    require_dir(&inputs.data, "dataset")?;
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::io(p, e));
    let checkpoint = Checkpoint::from_json(&read(&inputs.checkpoint)?)
        .map_err(|e| e.in_file(&inputs.checkpoint))?;
    let preprocessor = Preprocessor::from_json(&read(&inputs.preprocessor)?)
        .map_err(|e| e.in_file(&inputs.preprocessor))?;
    let cohort = data_ingest::load_cohort(&inputs.data, &preprocessor.schema, parallelism)?;
    let mut records = cohort.patients;
    if let (Some(folds), Some(fold)) = (&inputs.folds, inputs.fold) {
        let plan = read_folds_csv(folds)?;
        let ids: BTreeSet<String> = plan.test_ids(fold);
        if ids.is_empty() {
            return Err(CliError::Config(format!(
                "fold {fold} has no patients in {}",
                folds.display()
            )));
        }
        records.retain(|r| ids.contains(&r.patient_id));
    }
    let sequences = preprocessor.transform_all(&records, parallelism)?;
    Ok(LoadedModel {
        checkpoint,
        preprocessor,
        sequences,
    })
}

pub fn cmd_evaluate(
    args: &EvaluateArgs,
    parallelism: Parallelism,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mode: EvalMode = args.mode.parse()?;
    let loaded = load_model_inputs(&args.inputs, parallelism)?;
    let refs: Vec<&FeatureSequence> = loaded.sequences.iter().collect();
    let report = metrics::evaluate(
        &loaded.checkpoint.params,
        &refs,
        args.threshold,
        mode,
        parallelism,
    )?;
    let table = format!(
        "{}\n{}\n",
        EvalReport::csv_header(),
        report.csv_row(&args.model_id)
    );
    stdout.write_all(table.as_bytes()).map_err(out_io)?;
    if let Some(out) = &args.out {
        write_file(out, table)?;
    }
    Ok(())
}

pub fn cmd_explain(
    args: &ExplainArgs,
    parallelism: Parallelism,
    stdout: &mut dyn Write,
) -> Result<()> {
    let loaded = load_model_inputs(&args.inputs, parallelism)?;
    let refs: Vec<&FeatureSequence> = loaded.sequences.iter().collect();
    let report = explain::permutation_importance(
        &loaded.checkpoint.params,
        &refs,
        &loaded.preprocessor.feature_names(),
        args.seed,
        args.repeats,
        parallelism,
    )?;
    create_dir(&args.out)?;
    write_file(&args.out.join("importance.csv"), report.to_csv())?;
    write_file(
        &args.out.join("importance.json"),
        serde_json::to_string_pretty(&report).map_err(alrt_core::Error::from)?,
    )?;
    let table = report.top_table(args.top);
    write_file(&args.out.join("importance.txt"), &table)?;
    stdout.write_all(table.as_bytes()).map_err(out_io)?;
    Ok(())
}

pub fn render_report(file: &MetricsFile) -> String {
    let mut out = format!(
        "seed {} | {} patients ({} septic) | methods {} | eval {}\n\n",
        file.seed,
        file.n_patients,
        file.n_septic,
        file.manifest.sampling_method,
        file.manifest.eval_mode
    );
    let _ = writeln!(
        out,
        "{:<10} {:>11} {:>11} {:>9} {:>8} {:>7} {:>7}",
        "Model", "Specificity", "Sensitivity", "Precision", "Accuracy", "AUROC", "AUPRC"
    );
    for r in &file.rows {
        let _ = writeln!(
            out,
            "{:<10} {:>11.4} {:>11.4} {:>9.4} {:>8.4} {:>7.4} {:>7.4}",
            r.model_id, r.specificity, r.sensitivity, r.precision, r.accuracy, r.auroc, r.auprc
        );
    }
    let _ = writeln!(
        out,
        "\n{:<10} {:>8} {:>7} {:>7} {:>9}",
        "method", "labeled", "AUROC", "AUPRC", "test loss"
    );
    for r in &file.rows {
        let _ = writeln!(
            out,
            "{:<10} {:>7.0}% {:>7.4} {:>7.4} {:>9.4}",
            r.method,
            r.fraction * 100.0,
            r.auroc,
            r.auprc,
            r.mean_test_loss
        );
    }
    out
}

pub fn cmd_report(args: &ReportArgs, stdout: &mut dyn Write) -> Result<()> {
    let path = args.run.join("metrics.json");
    require_file(&path, "metrics file")?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let file: MetricsFile =
        serde_json::from_str(&text).map_err(|e| alrt_core::Error::from(e).in_file(&path))?;
    let report = render_report(&file);
    write_file(&args.run.join("report.txt"), &report)?;
    stdout.write_all(report.as_bytes()).map_err(out_io)?;
    Ok(())
}
