//! `stressnet` command line: argument parsing, config resolution and the
//! five subcommands.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use stressnet_core::eval::{make_split, SplitManifest};
use stressnet_core::features::{WindowSpec, WindowedDataset};
use stressnet_core::model::{FitConfig, Hyper, ModelKind};
use stressnet_core::nn::TrainConfig;
use stressnet_core::signal::Label;
use stressnet_core::synth::SynthConfig;
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::io::{self, FeatureMeta, IoError};
use crate::pipeline::{self, PipelineError};
use crate::report::{self, ReportFormat};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;
pub const EXIT_CONSISTENCY: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Consistency(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_IO,
            CliError::Training(_) => EXIT_TRAINING,
            CliError::Consistency(_) => EXIT_CONSISTENCY,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(e) => e.into(),
            other => CliError::Consistency(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Io(e) => e.into(),
            PipelineError::Checkpoint(e) => e.into(),
            PipelineError::Synth(_) | PipelineError::Pool(_) => CliError::Usage(msg),
            PipelineError::Subject { .. } | PipelineError::NoSubjects | PipelineError::Feature(_) => CliError::Io(msg),
            PipelineError::Training { .. } | PipelineError::Eval(_) => CliError::Training(msg),
            PipelineError::Consistency(_) => CliError::Consistency(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stressnet", version, about = "Personalized stress detection from heart rate and skin conductance")]
pub struct Cli {
    /// Master seed for synthesis, splits and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON file with defaults; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort: recordings, span files and a manifest.
    Synth(SynthArgs),
    /// Preprocess recordings and extract baseline-normalized window features.
    Featurize(FeaturizeArgs),
    /// Split, cross-validate and fit one or more model kinds.
    Train(TrainArgs),
    /// Score checkpoints on the held-out windows of a split.
    Evaluate(EvaluateArgs),
    /// Synth (or a manifest), featurize, train and evaluate in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthFlags {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub subjects: Option<u64>,
    /// Recording length per subject, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Sample rate, Hz.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Spread of resting HR across subjects, bpm.
    #[arg(long)]
    pub offset_std: Option<f64>,
    #[arg(long)]
    pub stress_hr_delta: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub synth: SynthFlags,
}

#[derive(Debug, Clone, Args)]
pub struct WindowFlags {
    /// Window length, seconds.
    #[arg(long)]
    pub window: Option<f64>,
    /// Window step, seconds.
    #[arg(long)]
    pub step: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowFlags,
}

#[derive(Debug, Clone, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    /// Model kinds, comma separated: lr, svm-l, svm-rbf, st-nn, mt-nn.
    #[arg(long, value_delimiter = ',', required = true)]
    pub model: Vec<ModelKind>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub features: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub split: PathBuf,
    #[arg(long, value_name = "FILE", value_delimiter = ',', required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Report formats, comma separated: json, csv, md.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Use recorded data instead of a synthetic cohort.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<ModelKind>>,
    #[arg(long)]
    pub format: Option<String>,
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub window: WindowFlags,
    #[command(flatten)]
    pub train: TrainFlags,
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub synth: Option<SynthConfig>,
    pub train: Option<TrainConfig>,
    pub window: Option<WindowSpec>,
    pub models: Option<Vec<ModelKind>>,
    pub formats: Option<Vec<ReportFormat>>,
    /// Replacement hyperparameter grids per model kind.
    pub grids: Option<BTreeMap<ModelKind, Vec<Hyper>>>,
}

/// Settings after merging defaults, the config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub jobs: usize,
    pub file: FileConfig,
}

impl Resolved {
    fn synth(&self, flags: &SynthFlags) -> Result<SynthConfig, CliError> {
        let mut cfg = self.file.synth.unwrap_or_default();
        cfg.seed = self.seed;
        if let Some(n) = flags.subjects {
            cfg.n_subjects = n as usize;
        }
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0) || !x.is_finite() => Err(CliError::Usage(format!("--{name} must be a positive number, got {x}"))),
            _ => Ok(v),
        };
        let non_negative = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x >= 0.0) || !x.is_finite() => Err(CliError::Usage(format!("--{name} must be non-negative, got {x}"))),
            _ => Ok(v),
        };
        if let Some(d) = positive("duration", flags.duration)? {
            cfg.duration_s = d;
        }
        if let Some(r) = positive("rate", flags.rate)? {
            cfg.sample_rate_hz = r;
        }
        if let Some(v) = non_negative("offset-std", flags.offset_std)? {
            cfg.subject_offset_std = v;
        }
        if let Some(v) = non_negative("stress-hr-delta", flags.stress_hr_delta)? {
            cfg.stress_hr_delta = v;
        }
        if let Some(v) = non_negative("noise-std", flags.noise_std)? {
            cfg.noise_std = v;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn window(&self, flags: &WindowFlags) -> Result<WindowSpec, CliError> {
        let base = self.file.window.unwrap_or_default();
        let spec = WindowSpec { len_s: flags.window.unwrap_or(base.len_s), step_s: flags.step.unwrap_or(base.step_s) };
        spec.validate().map_err(|e| CliError::Usage(format!("--window/--step: {e}")))?;
        Ok(spec)
    }

    fn fit_config(&self, flags: &TrainFlags) -> Result<FitConfig, CliError> {
        let mut nn = self.file.train.unwrap_or_default();
        if let Some(v) = flags.lr {
            nn.lr = v;
        }
        if let Some(v) = flags.max_epochs {
            nn.max_epochs = v;
        }
        if let Some(v) = flags.patience {
            nn.patience = v;
        }
        if let Some(v) = flags.batch_size {
            nn.batch_size = v;
        }
        nn.seed = self.seed;
        nn.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(FitConfig { nn, ..FitConfig::default() })
    }

    fn grid(&self, kind: ModelKind) -> Result<Vec<Hyper>, CliError> {
        match self.file.grids.as_ref().and_then(|g| g.get(&kind)) {
            Some(g) if g.is_empty() || g.iter().any(|h| !kind.accepts(h)) => {
                Err(CliError::Usage(format!("config grid for {kind} is empty or has foreign hyperparameters")))
            }
            Some(g) => Ok(g.clone()),
            None => Ok(kind.default_grid()),
        }
    }

    fn formats(&self, flag: &Option<String>) -> Result<Vec<ReportFormat>, CliError> {
        match flag {
            Some(s) => report::parse_formats(s).map_err(|e| CliError::Usage(format!("--format: {e}"))),
            None => Ok(self.file.formats.clone().unwrap_or_else(|| ReportFormat::ALL.to_vec())),
        }
    }
}

fn resolve(cli: &Cli) -> Result<Resolved, CliError> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let jobs = cli.jobs.or(file.jobs).unwrap_or(0);
    Ok(Resolved { seed, jobs, file })
}

/// Provenance written as `run.json` in every output directory.
#[derive(Debug, Serialize)]
struct RunRecord<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: C,
    inputs: Vec<String>,
    outputs: Vec<String>,
}

fn write_run_record<C: Serialize>(dir: &Path, command: &str, seed: u64, config: C, inputs: &[&Path], outputs: &[&Path]) -> Result<(), CliError> {
    let name = |p: &&Path| p.display().to_string();
    let rel = |p: &&Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
    let record = RunRecord {
        tool: "stressnet",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
        inputs: inputs.iter().map(name).collect(),
        outputs: outputs.iter().map(rel).collect(),
    };
    Ok(io::write_json(&dir.join("run.json"), &record)?)
}

fn require_file(path: &Path, flag: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("--{flag} {}: no such file", path.display())))
    }
}

pub fn cmd_synth(r: &Resolved, args: &SynthArgs) -> Result<PathBuf, CliError> {
    let cfg = r.synth(&args.synth)?;
    let manifest = pipeline::with_jobs(r.jobs, || pipeline::write_synth_dataset(&cfg, &args.out))??;
    println!("{}", manifest.display());
    Ok(manifest)
}

pub const FEATURES_FILE: &str = "features.csv";
pub const BASELINE_FILE: &str = "baseline_stats.json";

pub fn cmd_featurize(r: &Resolved, args: &FeaturizeArgs) -> Result<PathBuf, CliError> {
    let spec = r.window(&args.window)?;
    require_file(&args.manifest, "manifest")?;
    let manifest = io::load_manifest(&args.manifest)?;
    io::ensure_dir(&args.out)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let outcome = pipeline::with_jobs(r.jobs, || pipeline::featurize_manifest(&manifest, base, spec))??;

    println!("window {} s, step {} s", spec.len_s, spec.step_s);
    for (id, reason) in &outcome.failures {
        warn!("skipping subject {id}: {reason}");
    }
    for ((id, tally), sw) in outcome.tallies.iter().zip(&outcome.dataset.subjects) {
        println!(
            "{id}: {} windows ({} baseline, {} stress), dropped {} tied, {} unlabeled",
            tally.kept,
            sw.count(Label::Baseline),
            sw.count(Label::Stress),
            tally.ties,
            tally.unlabeled
        );
    }

    let features = args.out.join(FEATURES_FILE);
    let meta = FeatureMeta::path_for(&features);
    let stats = args.out.join(BASELINE_FILE);
    io::write_features(&features, outcome.dataset.vectors())?;
    io::write_json(&meta, &FeatureMeta::new(&manifest.name, spec, true))?;
    io::write_baseline_stats(&stats, &outcome.stats)?;
    write_run_record(&args.out, "featurize", r.seed, spec, &[&args.manifest], &[&features, &meta, &stats])?;
    Ok(features)
}

/// Loads a feature table and its sidecar (dataset name falls back to the
/// file stem when the sidecar is absent).
pub fn load_dataset(path: &Path) -> Result<(WindowedDataset, String), CliError> {
    require_file(path, "features")?;
    let vectors = io::load_features(path)?;
    let meta_path = FeatureMeta::path_for(path);
    let (name, spec, normalized) = if meta_path.is_file() {
        let meta: FeatureMeta = io::read_json(&meta_path)?;
        (meta.dataset, meta.window, meta.normalized)
    } else {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        (stem, WindowSpec::default(), true)
    };
    let ds = WindowedDataset::from_vectors(vectors, spec, normalized).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok((ds, name))
}

pub const SPLIT_FILE: &str = "split.json";

pub fn checkpoint_file(kind: ModelKind) -> String {
    format!("checkpoint-{}.json", kind.cli_name())
}

pub fn cmd_train(r: &Resolved, args: &TrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let cfg = r.fit_config(&args.train)?;
    let grids = args.model.iter().map(|&k| r.grid(k)).collect::<Result<Vec<_>, _>>()?;
    let (ds, name) = load_dataset(&args.features)?;
    io::ensure_dir(&args.out)?;
    let split = make_split(&ds, &name, r.seed).map_err(|e| CliError::Training(e.to_string()))?;
    let split_path = args.out.join(SPLIT_FILE);
    io::write_json(&split_path, &split)?;

    let mut written = Vec::new();
    for (&kind, grid) in args.model.iter().zip(&grids) {
        info!("training {kind} over {} grid points", grid.len());
        let outcome = pipeline::with_jobs(r.jobs, || pipeline::train_kind(&ds, &split, kind, grid, &cfg))??;
        println!("{kind}: selected {} (mean CV F1 {:.4})", outcome.cv.best, outcome.cv.mean_scores[outcome.cv.best_index]);
        let ck = Checkpoint::new(&name, r.seed, outcome.train_config, cfg, outcome.cv, outcome.model);
        let path = args.out.join(checkpoint_file(kind));
        ck.save(&path)?;
        written.push(path);
    }
    let mut outputs: Vec<&Path> = vec![&split_path];
    outputs.extend(written.iter().map(PathBuf::as_path));
    #[derive(Serialize)]
    struct TrainRecord<'a> {
        models: &'a [ModelKind],
        fit: FitConfig,
        grids: &'a [Vec<Hyper>],
    }
    let record = TrainRecord { models: &args.model, fit: cfg, grids: &grids };
    write_run_record(&args.out, "train", r.seed, record, &[&args.features], &outputs)?;
    Ok(written)
}

pub const REPORT_STEM: &str = "report";

pub fn cmd_evaluate(r: &Resolved, args: &EvaluateArgs) -> Result<Vec<PathBuf>, CliError> {
    let formats = r.formats(&args.format)?;
    let (ds, _) = load_dataset(&args.features)?;
    require_file(&args.split, "split")?;
    let split: SplitManifest = io::read_json(&args.split)?;
    let checkpoints = args
        .checkpoint
        .iter()
        .map(|p| {
            require_file(p, "checkpoint")?;
            Ok(Checkpoint::load(p)?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    io::ensure_dir(&args.out)?;
    let report = pipeline::with_jobs(r.jobs, || pipeline::evaluate_checkpoints(&ds, &split, &checkpoints))??;

    let mut written = Vec::new();
    for f in &formats {
        let text = report::render(&report, *f).map_err(|e| CliError::Usage(e.to_string()))?;
        let path = args.out.join(format!("{REPORT_STEM}.{}", f.extension()));
        fs::write(&path, text).map_err(|e| IoError::fs(&path, e))?;
        written.push(path);
    }
    print!("{}", report::to_markdown(&report));
    let mut inputs: Vec<&Path> = vec![&args.features, &args.split];
    inputs.extend(args.checkpoint.iter().map(PathBuf::as_path));
    let outputs: Vec<&Path> = written.iter().map(PathBuf::as_path).collect();
    write_run_record(&args.out, "evaluate", r.seed, &formats, &inputs, &outputs)?;
    Ok(written)
}

pub fn cmd_pipeline(r: &Resolved, args: &PipelineArgs) -> Result<Vec<PathBuf>, CliError> {
    let models = args.models.clone().or_else(|| r.file.models.clone()).unwrap_or_else(|| ModelKind::ALL.to_vec());
    if models.is_empty() {
        return Err(CliError::Usage("--models must name at least one model kind".into()));
    }
    let formats = r.formats(&args.format)?;
    io::ensure_dir(&args.out)?;
    let manifest = match &args.manifest {
        Some(m) => m.clone(),
        None => cmd_synth(r, &SynthArgs { out: args.out.join("data"), synth: args.synth.clone() })?,
    };
    let features = cmd_featurize(r, &FeaturizeArgs { manifest: manifest.clone(), out: args.out.join("features"), window: args.window.clone() })?;
    let checkpoints = cmd_train(r, &TrainArgs { features: features.clone(), model: models.clone(), out: args.out.join("models"), train: args.train.clone() })?;
    let format = Some(formats.iter().map(|f| f.extension()).collect::<Vec<_>>().join(","));
    let reports = cmd_evaluate(
        r,
        &EvaluateArgs {
            features: features.clone(),
            split: args.out.join("models").join(SPLIT_FILE),
            checkpoint: checkpoints,
            out: args.out.join("report"),
            format,
        },
    )?;
    let outputs: Vec<&Path> = reports.iter().map(PathBuf::as_path).collect();
    write_run_record(&args.out, "pipeline", r.seed, &models, &[&manifest], &outputs)?;
    Ok(reports)
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let r = resolve(cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&r, a).map(drop),
        Command::Featurize(a) => cmd_featurize(&r, a).map(drop),
        Command::Train(a) => cmd_train(&r, a).map(drop),
        Command::Evaluate(a) => cmd_evaluate(&r, a).map(drop),
        Command::Pipeline(a) => cmd_pipeline(&r, a).map(drop),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
