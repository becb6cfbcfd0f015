//! Stage implementations shared by the CLI and the tests: dataset loading,
//! featurization, cross-validated training and evaluation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use stressnet_core::eval::{self, CvResult, EvalError, MetricsReport, SplitManifest, N_FOLDS};
use stressnet_core::features::{
    baseline_normalize, featurize_recording, BaselineStats, FeatureError, SubjectWindows, WindowSpec, WindowTally,
    WindowedDataset,
};
use stressnet_core::model::{fit, FitConfig, Hyper, ModelError, ModelKind, TrainedModel};
use stressnet_core::nn::TrainConfig;
use stressnet_core::rng::derive_seed;
use stressnet_core::signal::{
    detect_marker_peaks, remove_artifacts, spans_from_labels, trim_and_label, LabelSpan, SubjectRecording,
};
use stressnet_core::synth::{self, SynthConfig, SynthError};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::io::{self, DatasetManifest, IoError, LabelMode, ManifestSubject};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("subject {subject}: {message}")]
    Subject { subject: String, message: String },
    #[error("no subject could be featurized")]
    NoSubjects,
    #[error("{kind}: {source}")]
    Training { kind: ModelKind, source: EvalError },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("inconsistent inputs: {0}")]
    Consistency(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Runs `f` on a rayon pool of `jobs` threads (0 = rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| PipelineError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Recording file of subject `id` inside a synth output directory.
pub fn synth_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.csv")), dir.join(format!("{id}_spans.csv")))
}

pub const SYNTH_DATASET_NAME: &str = "synth";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one recording and one span file per subject plus the manifest,
/// and returns the manifest path.
pub fn write_synth_dataset(cfg: &SynthConfig, dir: &Path) -> Result<PathBuf, PipelineError> {
    cfg.validate()?;
    io::ensure_dir(dir)?;
    let subjects = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| -> Result<ManifestSubject, PipelineError> {
            let (rec, spans) = synth::generate_subject(cfg, i)?;
            let (rec_path, span_path) = synth_paths(dir, &rec.subject_id);
            io::write_recording(&rec_path, &rec)?;
            io::write_spans(&span_path, &spans)?;
            let file = |p: &Path| p.file_name().expect("joined file name").to_string_lossy().into_owned();
            Ok(ManifestSubject {
                subject_id: rec.subject_id,
                path: file(&rec_path),
                format: "csv".into(),
                spans: Some(file(&span_path)),
                hr_rate_hz: None,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = DatasetManifest {
        name: SYNTH_DATASET_NAME.into(),
        sample_rate_hz: cfg.sample_rate_hz,
        label_mode: LabelMode::SpanFile,
        trial_template: Vec::new(),
        subjects,
    };
    let path = dir.join(MANIFEST_FILE);
    io::write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads one subject, repairs artifacts and derives its label spans.
pub fn preprocess_subject(
    manifest: &DatasetManifest,
    base: &Path,
    subject: &ManifestSubject,
) -> Result<(SubjectRecording, Vec<LabelSpan>), PipelineError> {
    let fail = |message: String| PipelineError::Subject { subject: subject.subject_id.clone(), message };
    let path = base.join(&subject.path);
    let rec = io::load_recording(&path, &subject.subject_id, manifest.sample_rate_hz, subject.hr_rate_hz)?;
    let rec = remove_artifacts(&rec).map_err(|e| fail(e.to_string()))?;
    match manifest.label_mode {
        LabelMode::SpanFile => {
            let spans_file = subject.spans.as_ref().ok_or_else(|| fail("no span file".into()))?;
            let spans = io::load_spans(&base.join(spans_file))?;
            Ok((rec, spans))
        }
        LabelMode::LabelColumn => {
            let labels = rec.labels.as_ref().ok_or_else(|| fail("recording has no label column".into()))?;
            let spans = spans_from_labels(&rec, labels);
            Ok((rec, spans))
        }
        LabelMode::MarkerDerived => {
            let marker = rec.marker.as_ref().ok_or_else(|| fail("recording has no marker column".into()))?;
            let peaks = detect_marker_peaks(marker, rec.sample_rate_hz);
            trim_and_label(&rec, &peaks, &manifest.trial_template).map_err(|e| fail(e.to_string()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeaturizeOutcome {
    /// Baseline-normalized windows of every subject that succeeded.
    pub dataset: WindowedDataset,
    pub stats: BaselineStats,
    pub tallies: Vec<(String, WindowTally)>,
    /// Subjects that were skipped, with the reason.
    pub failures: Vec<(String, String)>,
}

fn featurize_one(rec: &SubjectRecording, spans: &[LabelSpan], spec: WindowSpec) -> Result<(SubjectWindows, BaselineStats, WindowTally), String> {
    let (vectors, tally) = featurize_recording(rec, spans, spec).map_err(|e| e.to_string())?;
    if vectors.is_empty() {
        return Err("no labeled windows".into());
    }
    let raw = WindowedDataset::from_vectors(vectors, spec, false).map_err(|e| e.to_string())?;
    let (norm, stats) = baseline_normalize(&raw).map_err(|e| e.to_string())?;
    let subject = norm.subjects.into_iter().next().expect("one subject");
    Ok((subject, stats, tally))
}

/// Featurizes preprocessed recordings. Failing subjects are reported and
/// left out.
pub fn featurize_recordings(
    inputs: Vec<Result<(SubjectRecording, Vec<LabelSpan>), (String, String)>>,
    spec: WindowSpec,
) -> Result<FeaturizeOutcome, PipelineError> {
    spec.validate()?;
    let results: Vec<_> = inputs
        .into_par_iter()
        .map(|r| match r {
            Ok((rec, spans)) => featurize_one(&rec, &spans, spec).map_err(|m| (rec.subject_id.clone(), m)),
            Err(e) => Err(e),
        })
        .collect();
    let mut subjects = Vec::new();
    let mut stats = BaselineStats::default();
    let mut tallies = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok((s, st, tally)) => {
                tallies.push((s.subject_id.clone(), tally));
                stats.0.extend(st.0);
                subjects.push(s);
            }
            Err(f) => failures.push(f),
        }
    }
    if subjects.is_empty() {
        return Err(PipelineError::NoSubjects);
    }
    let dataset = WindowedDataset::new(subjects, spec, true)?;
    Ok(FeaturizeOutcome { dataset, stats, tallies, failures })
}

pub fn featurize_manifest(manifest: &DatasetManifest, base: &Path, spec: WindowSpec) -> Result<FeaturizeOutcome, PipelineError> {
    let inputs = manifest
        .subjects
        .par_iter()
        .map(|s| preprocess_subject(manifest, base, s).map_err(|e| (s.subject_id.clone(), e.to_string())))
        .collect();
    featurize_recordings(inputs, spec)
}

/// Featurizes a synthetic cohort without touching the disk.
pub fn featurize_synth(cfg: &SynthConfig, spec: WindowSpec) -> Result<FeaturizeOutcome, PipelineError> {
    cfg.validate()?;
    let inputs = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| synth::generate_subject(cfg, i).map_err(|e| (synth::subject_id(i), e.to_string())))
        .collect();
    featurize_recordings(inputs, spec)
}

/// Seed for one fit of `kind`: slots `0..N_FOLDS` are CV folds, `N_FOLDS`
/// is the final fit.
pub fn fit_seed(master: u64, kind: ModelKind, slot: usize) -> u64 {
    derive_seed(master, kind.index() * 16 + slot as u64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub cv: CvResult,
    /// Network settings of the final fit; `None` for the baselines.
    pub train_config: Option<TrainConfig>,
}

/// Cross-validates `grid` on the split's folds, then refits the winner on
/// the full training split. Folds run in parallel on the current pool.
pub fn train_kind(
    ds: &WindowedDataset,
    split: &SplitManifest,
    kind: ModelKind,
    grid: &[Hyper],
    cfg: &FitConfig,
) -> Result<TrainOutcome, PipelineError> {
    let wrap = |source: EvalError| PipelineError::Training { kind, source };
    split.check(ds).map_err(wrap)?;
    if grid.is_empty() {
        return Err(wrap(EvalError::EmptyGrid));
    }
    if let Some(h) = grid.iter().find(|h| !kind.accepts(h)) {
        return Err(wrap(EvalError::Model(ModelError::HyperMismatch { kind, hyper: h.to_string() })));
    }
    let folds: Vec<_> = (0..N_FOLDS).map(|k| eval::fold_data(ds, split, k)).collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|h| (0..N_FOLDS).map(move |k| (h, k))).collect();
    let scores = jobs
        .par_iter()
        .map(|&(h, k)| {
            let (fit_data, val) = &folds[k];
            fit(kind, grid[h], fit_data, cfg, fit_seed(split.seed, kind, k))
                .and_then(|m| eval::pooled_f1(&m, val))
                .map_err(|source| EvalError::Fold { fold: k, hyper: grid[h].to_string(), source })
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(wrap)?;
    let table: Vec<Vec<f64>> = scores.chunks(N_FOLDS).map(<[f64]>::to_vec).collect();
    let cv = eval::select_best(grid, table).map_err(wrap)?;

    let seed = fit_seed(split.seed, kind, N_FOLDS);
    let train = eval::train_data(ds, split);
    let model = fit(kind, cv.best, &train, cfg, seed).map_err(|e| wrap(EvalError::Model(e)))?;
    let train_config = match (kind, cv.best) {
        (ModelKind::StNn | ModelKind::MtNn, Hyper::L2 { lambda }) => Some(TrainConfig { l2_lambda: lambda, seed, ..cfg.nn }),
        _ => None,
    };
    Ok(TrainOutcome { model, cv, train_config })
}

/// Checks that every checkpoint was trained on the split's dataset and seed,
/// then evaluates them on the test windows.
pub fn evaluate_checkpoints(
    ds: &WindowedDataset,
    split: &SplitManifest,
    checkpoints: &[Checkpoint],
) -> Result<MetricsReport, PipelineError> {
    split.check(ds).map_err(|e| PipelineError::Consistency(e.to_string()))?;
    for c in checkpoints {
        if c.seed != split.seed {
            return Err(PipelineError::Consistency(format!(
                "{} checkpoint has seed {}, split manifest has seed {}",
                c.model_kind, c.seed, split.seed
            )));
        }
        if c.dataset != split.dataset {
            return Err(PipelineError::Consistency(format!(
                "{} checkpoint is for dataset {:?}, split manifest for {:?}",
                c.model_kind, c.dataset, split.dataset
            )));
        }
    }
    let test = eval::test_data(ds, split);
    let models = checkpoints
        .par_iter()
        .map(|c| eval::evaluate_model(c.model_kind.display_name(), &c.model, &test))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            EvalError::Model(ModelError::TaskMissingHead(s)) => {
                PipelineError::Consistency(format!("no trained head for subject {s}"))
            }
            other => PipelineError::Eval(other),
        })?;
    Ok(MetricsReport { dataset: split.dataset.clone(), seed: split.seed, models })
}
