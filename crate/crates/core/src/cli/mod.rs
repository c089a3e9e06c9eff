//! Command-line front end: dataset generation, training, rollout, monitoring
//! and the letter evaluation. Every artifact carries the seed, a hash of the
//! resolved configuration and a format version.
//!
//! Exit codes: 0 success, 2 input error, 3 incomplete pipeline state.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{
    apply_perturbation, generate_letter_dataset_with, read_dataset, write_dataset,
    PerturbationSpec, VariationConfig,
};
use crate::error::DmpError;
use crate::experiment::{evaluate_models, ExperimentSummary};
use crate::imitation::{demo_task, learn_primitive, LearnConfig, TrainingReport};
use crate::kalman::rollout;
use crate::lds::DiscretizationMode;
use crate::model::{PrimitiveModel, Provenance, MODEL_FORMAT_VERSION};
use crate::monitor::{
    classify_with_threshold, threshold_from_min, Aggregation, MonitorReport, Verdict,
};
use crate::trajectory::{csv_header, read_dir_trajectories, read_trajectory, Trajectory};

/// Version stamped into every report and CSV sidecar written by the CLI.
pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SEED: u64 = 42;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INCOMPLETE: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad or unreadable input.
    Input(String),
    /// Earlier pipeline stages have not produced what this command needs.
    Incomplete(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Incomplete(_) => EXIT_INCOMPLETE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Incomplete(m) => write!(f, "incomplete pipeline state: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DmpError> for CliError {
    fn from(e: DmpError) -> Self {
        CliError::Input(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "probdmp",
    version,
    about = "Probabilistic dynamic movement primitives"
)]
pub struct Cli {
    /// JSON configuration file; command-line flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic letter dataset.
    GenDataset(GenDatasetArgs),
    /// Learn a primitive from a directory of demonstration CSVs.
    Train(TrainArgs),
    /// Write the mean and position std of an unobserved execution.
    Rollout(RolloutArgs),
    /// Execute a model against observations and classify the execution.
    Monitor(MonitorArgs),
    /// Run the letter failure-detection experiment.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiscretizationArg {
    PrintedA,
    SubstitutedEuler,
}

impl From<DiscretizationArg> for DiscretizationMode {
    fn from(d: DiscretizationArg) -> Self {
        match d {
            DiscretizationArg::PrintedA => DiscretizationMode::PrintedA,
            DiscretizationArg::SubstitutedEuler => DiscretizationMode::SubstitutedEuler,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    PerStep,
    Cumulative,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::PerStep => Aggregation::PerStep,
            AggregationArg::Cumulative => Aggregation::Cumulative,
        }
    }
}

/// Learning flags shared by `train` and `eval`.
#[derive(Debug, Clone, Default, Args)]
pub struct LearnFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub discretization: Option<DiscretizationArg>,
    #[arg(long)]
    pub n_basis: Option<usize>,
    #[arg(long)]
    pub em_iters: Option<usize>,
    #[arg(long)]
    pub em_tol: Option<f64>,
    /// Multiple of the training minimum used as failure threshold.
    #[arg(long)]
    pub threshold_multiplier: Option<f64>,
    /// Moving-average window of the monitored score.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDatasetArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory holding the demonstration CSVs.
    #[arg(long, value_name = "DIR")]
    pub demos: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Training report; defaults to `<out>.report.json`.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Model label; defaults to the demonstrations' label.
    #[arg(long)]
    pub label: Option<String>,
    #[command(flatten)]
    pub learn: LearnFlags,
}

#[derive(Debug, Clone, Args)]
pub struct RolloutArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Number of rows; defaults to the fitted length.
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// Comma-separated start position; defaults to the fitted mean start.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub start: Option<Vec<f64>>,
    /// Comma-separated goal position; defaults to the fitted mean goal.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub goal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct MonitorArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Observed trajectory CSV.
    #[arg(long, value_name = "FILE")]
    pub observations: PathBuf,
    /// Report JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Per-step log-likelihood CSV; defaults to `<out>.loglik.csv`.
    #[arg(long, value_name = "FILE")]
    pub loglik_csv: Option<PathBuf>,
    /// Apply a hold perturbation `onset,duration` (fractions of the length).
    #[arg(long, value_delimiter = ',')]
    pub hold: Option<Vec<f64>>,
    /// Overrides the multiplier stored in the model.
    #[arg(long)]
    pub threshold_multiplier: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Dataset root written by `gen-dataset`.
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Load `<letter>.json` models from here instead of training.
    #[arg(long, value_name = "DIR")]
    pub models: Option<PathBuf>,
    /// Save the trained models here.
    #[arg(long, value_name = "DIR")]
    pub save_models: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Hold perturbation `onset,duration`; defaults to `0.5,0.5`.
    #[arg(long, value_delimiter = ',')]
    pub hold: Option<Vec<f64>>,
    #[command(flatten)]
    pub learn: LearnFlags,
}

/// Hold perturbation as stored in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldConfig {
    pub onset_fraction: f64,
    pub duration_fraction: f64,
}

impl Default for HoldConfig {
    fn default() -> Self {
        HoldConfig {
            onset_fraction: 0.5,
            duration_fraction: 0.5,
        }
    }
}

/// Configuration file contents. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub variation: Option<VariationConfig>,
    pub learn: Option<LearnConfig>,
    pub hold: Option<HoldConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings of one invocation (paths excluded), the input to
/// the configuration hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub variation: VariationConfig,
    pub learn: LearnConfig,
    pub hold: HoldConfig,
}

impl RunConfig {
    pub fn resolve(command: &str, file: &FileConfig) -> Self {
        RunConfig {
            command: command.to_string(),
            seed: file.seed.unwrap_or(DEFAULT_SEED),
            n_train: file.n_train.unwrap_or(10),
            n_test: file.n_test.unwrap_or(10),
            variation: file.variation.unwrap_or_default(),
            learn: file.learn.clone().unwrap_or_default(),
            hold: file.hold.unwrap_or_default(),
        }
    }

    fn apply_learn_flags(&mut self, flags: &LearnFlags) {
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(d) = flags.discretization {
            self.learn.discretization = d.into();
        }
        if let Some(n) = flags.n_basis {
            self.learn.n_basis = n;
        }
        if let Some(n) = flags.em_iters {
            self.learn.em_iters = n;
        }
        if let Some(t) = flags.em_tol {
            self.learn.em_tol = t;
        }
        if let Some(m) = flags.threshold_multiplier {
            self.learn.monitor.threshold_multiplier = m;
        }
        if let Some(w) = flags.window {
            self.learn.monitor.window = w;
        }
        if let Some(a) = flags.aggregation {
            self.learn.monitor.aggregation = a.into();
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("run config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            seed: Some(self.seed),
            config_hash: Some(self.hash()),
        }
    }

    fn validate(&self) -> CliResult<()> {
        self.variation.validate()?;
        self.learn.monitor.validate()?;
        if self.learn.n_basis == 0 {
            return Err(CliError::Input("n_basis must be at least 1".into()));
        }
        if !(self.learn.em_tol >= 0.0) {
            return Err(CliError::Input("em_tol must be non-negative".into()));
        }
        hold_spec(&[self.hold.onset_fraction, self.hold.duration_fraction])?;
        Ok(())
    }
}

/// Metadata block written into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format_version: u32,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
}

impl ArtifactHeader {
    fn new(p: &Provenance) -> Self {
        ArtifactHeader {
            format_version: REPORT_FORMAT_VERSION,
            seed: p.seed,
            config_hash: p.config_hash.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutput {
    #[serde(flatten)]
    pub header: ArtifactHeader,
    pub label: String,
    pub model_format_version: u32,
    #[serde(flatten)]
    pub report: TrainingReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorOutput {
    #[serde(flatten)]
    pub header: ArtifactHeader,
    pub model_label: String,
    pub observations: String,
    pub perturbation: Option<PerturbationSpec>,
    #[serde(flatten)]
    pub report: MonitorReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub header: ArtifactHeader,
    pub wall_clock_seconds: f64,
    pub models_loaded: bool,
    #[serde(flatten)]
    pub summary: ExperimentSummary,
}

/// Sidecar of the CSV artifacts (`rollout`, `monitor` traces).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSidecar {
    #[serde(flatten)]
    pub header: ArtifactHeader,
    pub kind: String,
    pub columns: Vec<String>,
    pub model_label: String,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("probdmp: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::GenDataset(a) => gen_dataset(a, &file),
        Command::Train(a) => train(a, &file),
        Command::Rollout(a) => rollout_cmd(a),
        Command::Monitor(a) => monitor(a),
        Command::Eval(a) => eval(a, &file),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))? + "\n";
    fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    fs::write(path, text)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display()))),
        _ => Ok(()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{what} {} is not a directory",
            path.display()
        )))
    }
}

fn hold_spec(v: &[f64]) -> CliResult<PerturbationSpec> {
    if v.len() != 2 {
        return Err(CliError::Input(format!(
            "--hold takes `onset,duration`, got {} values",
            v.len()
        )));
    }
    let spec = PerturbationSpec::hold(v[0], v[1]);
    spec.validate()?;
    Ok(spec)
}

fn load_model(path: &Path) -> CliResult<PrimitiveModel> {
    require_file(path, "model")?;
    Ok(PrimitiveModel::load(path)?)
}

fn gen_dataset(a: &GenDatasetArgs, file: &FileConfig) -> CliResult<()> {
    let mut cfg = RunConfig::resolve("gen-dataset", file);
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_train {
        cfg.n_train = n;
    }
    if let Some(n) = a.n_test {
        cfg.n_test = n;
    }
    cfg.validate()?;
    let ds = generate_letter_dataset_with(cfg.seed, cfg.n_train, cfg.n_test, &cfg.variation);
    let manifest = write_dataset(&a.out, &ds, Some(&cfg.hash()))?;
    println!(
        "wrote {} trajectories for {} letters to {} (seed {})",
        ds.n_trajectories(),
        manifest.letters.len(),
        a.out.display(),
        cfg.seed
    );
    Ok(())
}

fn train(a: &TrainArgs, file: &FileConfig) -> CliResult<()> {
    let mut cfg = RunConfig::resolve("train", file);
    let explicit_seed = a.learn.seed.or(file.seed);
    cfg.apply_learn_flags(&a.learn);
    cfg.validate()?;
    require_dir(&a.demos, "demonstration directory")?;
    let demos = read_dir_trajectories(&a.demos)?;
    if demos.is_empty() {
        return Err(CliError::Input(format!(
            "no demonstration CSVs in {}",
            a.demos.display()
        )));
    }
    if explicit_seed.is_none() {
        if let Some(seed) = sidecar_seed(&a.demos) {
            cfg.seed = seed;
        }
    }
    let label = a
        .label
        .clone()
        .or_else(|| {
            demos
                .iter()
                .map(|d| d.label.clone())
                .find(|l| !l.is_empty())
        })
        .unwrap_or_else(|| {
            a.demos
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "primitive".into())
        });
    let (mut model, report) = learn_primitive(demos, &label, &cfg.learn)?;
    model.provenance = cfg.provenance();
    model.save(&a.out)?;
    let out = TrainOutput {
        header: ArtifactHeader::new(&model.provenance),
        label: label.clone(),
        model_format_version: MODEL_FORMAT_VERSION,
        report,
    };
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".report.json"));
    write_json(&report_path, &out)?;
    println!(
        "trained `{label}` on {} demos: threshold {:.4}, R {:?}",
        out.report.n_demos, out.report.threshold, out.report.r
    );
    Ok(())
}

/// Seed recorded in the sidecar of the first demonstration, if any.
fn sidecar_seed(dir: &Path) -> Option<u64> {
    let first = crate::trajectory::list_csv(dir).ok()?.into_iter().next()?;
    let text = fs::read_to_string(crate::trajectory::sidecar_path(&first)).ok()?;
    serde_json::from_str::<crate::trajectory::Sidecar>(&text)
        .ok()?
        .seed
}

fn check_dofs(model: &PrimitiveModel, v: &[f64], what: &str) -> CliResult<()> {
    if v.len() != model.n_dofs() {
        return Err(CliError::Input(format!(
            "{what} has {} values but the model has {} DOFs",
            v.len(),
            model.n_dofs()
        )));
    }
    Ok(())
}

fn rollout_cmd(a: &RolloutArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let start = a.start.clone().unwrap_or_else(|| model.fit.start.clone());
    let goal = a.goal.clone().unwrap_or_else(|| model.fit.goal.clone());
    check_dofs(&model, &start, "--start")?;
    check_dofs(&model, &goal, "--goal")?;
    let n_steps = a.n_steps.unwrap_or(model.fit.n_steps);
    if n_steps == 0 {
        return Err(CliError::Input("--n-steps must be at least 1".into()));
    }
    let task = model.task(start, goal);
    let beliefs = rollout(&model, &task, n_steps)?;
    let n = model.n_dofs();
    let names: Vec<String> = csv_header(n).split(',').map(str::to_string).collect();
    let mut columns = names.clone();
    columns.extend(names[1..].iter().map(|c| format!("{c}_std")));
    let mut text = columns.join(",") + "\n";
    for b in &beliefs {
        let mut row = vec![format!("{}", b.step as f64 * task.dt)];
        row.extend(b.positions().iter().map(|v| format!("{v}")));
        row.extend(b.position_stds().iter().map(|v| format!("{v}")));
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(&a.out, &text)?;
    write_json(
        &a.out.with_extension("json"),
        &CsvSidecar {
            header: ArtifactHeader::new(&model.provenance),
            kind: "rollout".into(),
            columns,
            model_label: model.label.clone(),
        },
    )?;
    println!("wrote {n_steps} rollout rows to {}", a.out.display());
    Ok(())
}

fn observations_of(traj: &Trajectory) -> Vec<Option<&[f64]>> {
    traj.samples.iter().map(|r| Some(r.as_slice())).collect()
}

fn monitor(a: &MonitorArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    require_file(&a.observations, "observation file")?;
    let cal = model.calibration.clone().ok_or_else(|| {
        CliError::Incomplete(format!(
            "model {} has no calibrated threshold",
            a.model.display()
        ))
    })?;
    let obs = read_trajectory(&a.observations)?;
    if obs.n_dofs() != model.n_dofs() {
        return Err(CliError::Input(format!(
            "observations have {} DOFs but the model has {}",
            obs.n_dofs(),
            model.n_dofs()
        )));
    }
    if obs.len() != model.fit.n_steps {
        return Err(CliError::Input(format!(
            "observations have {} samples but the model expects {}",
            obs.len(),
            model.fit.n_steps
        )));
    }
    if (obs.dt - model.fit.dt).abs() > 1e-9 * model.fit.dt.max(1.0) {
        return Err(CliError::Input(format!(
            "observation dt {} differs from the model dt {}",
            obs.dt, model.fit.dt
        )));
    }
    let perturbation = a.hold.as_deref().map(hold_spec).transpose()?;
    let observed = match &perturbation {
        Some(spec) => apply_perturbation(&obs, spec)?,
        None => obs.clone(),
    };
    let mut config = cal.config.clone();
    let threshold = match a.threshold_multiplier {
        Some(m) => {
            config.threshold_multiplier = m;
            config.validate()?;
            threshold_from_min(cal.train_loglik_min, m)
        }
        None => cal.threshold,
    };
    let task = demo_task(&model, &observed);
    let report = classify_with_threshold(
        &model,
        &task,
        &observations_of(&observed),
        threshold,
        &config,
    )?;

    let csv_path = a
        .loglik_csv
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".loglik.csv"));
    let mut text = String::from("t,loglik\n");
    for (i, l) in report.per_step_loglik.iter().enumerate() {
        let v = l.map(|v| format!("{v}")).unwrap_or_default();
        text.push_str(&format!("{},{v}\n", i as f64 * task.dt));
    }
    write_text(&csv_path, &text)?;
    let header = ArtifactHeader::new(&model.provenance);
    write_json(
        &csv_path.with_extension("json"),
        &CsvSidecar {
            header: header.clone(),
            kind: "loglik".into(),
            columns: vec!["t".into(), "loglik".into()],
            model_label: model.label.clone(),
        },
    )?;
    let verdict = report.verdict;
    let step = report.failure_step;
    write_json(
        &a.out,
        &MonitorOutput {
            header,
            model_label: model.label.clone(),
            observations: a.observations.display().to_string(),
            perturbation,
            report,
        },
    )?;
    match (verdict, step) {
        (Verdict::Failed, Some(s)) => {
            println!("Failed at step {s} (t = {:.3} s)", s as f64 * task.dt)
        }
        _ => println!("Nominal"),
    }
    Ok(())
}

fn eval(a: &EvalArgs, file: &FileConfig) -> CliResult<()> {
    let started = Instant::now();
    let mut cfg = RunConfig::resolve("eval", file);
    cfg.apply_learn_flags(&a.learn);
    if let Some(h) = &a.hold {
        hold_spec(h)?;
        cfg.hold = HoldConfig {
            onset_fraction: h[0],
            duration_fraction: h[1],
        };
    }
    cfg.validate()?;
    let perturbation = hold_spec(&[cfg.hold.onset_fraction, cfg.hold.duration_fraction])?;
    if !a.dataset.join("letters").is_dir() {
        return Err(CliError::Incomplete(format!(
            "{} holds no generated dataset (run gen-dataset first)",
            a.dataset.display()
        )));
    }
    if let Some(dir) = &a.models {
        require_dir(dir, "model directory")?;
    }
    let dataset = read_dataset(&a.dataset)?;
    if a.learn.seed.is_none() && file.seed.is_none() {
        cfg.seed = dataset.seed;
    }
    let multiplier = cfg.learn.monitor.threshold_multiplier;

    let models: BTreeMap<String, PrimitiveModel> = match &a.models {
        Some(dir) => {
            let missing: Vec<&str> = dataset
                .letters
                .iter()
                .map(|l| l.letter.as_str())
                .filter(|l| !dir.join(format!("{l}.json")).is_file())
                .collect();
            if !missing.is_empty() {
                return Err(CliError::Incomplete(format!(
                    "missing models for letters: {}",
                    missing.join(", ")
                )));
            }
            dataset
                .letters
                .iter()
                .map(|l| {
                    Ok((
                        l.letter.clone(),
                        PrimitiveModel::load(&dir.join(format!("{}.json", l.letter)))?,
                    ))
                })
                .collect::<CliResult<_>>()?
        }
        None => {
            let untrainable: Vec<&str> = dataset
                .letters
                .iter()
                .filter(|l| l.train.is_empty())
                .map(|l| l.letter.as_str())
                .collect();
            if !untrainable.is_empty() {
                return Err(CliError::Incomplete(format!(
                    "no training demonstrations for letters: {}",
                    untrainable.join(", ")
                )));
            }
            use rayon::prelude::*;
            let provenance = cfg.provenance();
            dataset
                .letters
                .par_iter()
                .map(|l| {
                    let (mut m, _) = learn_primitive(l.train.clone(), &l.letter, &cfg.learn)?;
                    m.provenance = provenance.clone();
                    Ok((l.letter.clone(), m))
                })
                .collect::<std::result::Result<_, DmpError>>()?
        }
    };
    if let Some(dir) = &a.save_models {
        for (letter, m) in &models {
            m.save(&dir.join(format!("{letter}.json")))?;
        }
    }
    let summary = evaluate_models(&dataset, &models, &perturbation, multiplier)?;
    let out = EvalOutput {
        header: ArtifactHeader::new(&cfg.provenance()),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        models_loaded: a.models.is_some(),
        summary,
    };
    write_json(&a.out, &out)?;
    let s = &out.summary;
    for l in &s.letters {
        println!(
            "{}: false positives {}/{}, detections {}/{}",
            l.letter, l.false_positives, l.n_test, l.detections, l.n_test
        );
    }
    println!(
        "false positives {}/{}, detections {}/{}, {:.2} s",
        s.false_positives, s.n_test_cases, s.detections, s.n_test_cases, out.wall_clock_seconds
    );
    Ok(())
}
