//! Within-subject train/test splits, cross-validated hyperparameter
//! selection, F1 and Cohen's kappa, and per-model aggregation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::WindowedDataset;
use crate::math;
use crate::model::{Hyper, ModelError, TrainedModel};
use crate::nn::TaskData;
use crate::rng::{substream, Domain};
use crate::signal::Label;

pub const TEST_FRACTION: f64 = 0.2;
pub const N_FOLDS: usize = 5;
/// Fewest windows a subject needs to be split.
pub const MIN_SUBJECT_WINDOWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("subject {subject} has {n} windows, at least {MIN_SUBJECT_WINDOWS} are needed")]
    SubjectTooSmall { subject: String, n: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("split manifest does not match the dataset: {0}")]
    ManifestMismatch(String),
    #[error("fold {fold} with {hyper}: {source}")]
    Fold { fold: usize, hyper: String, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("{0} true labels but {1} predictions")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub subject_id: String,
    pub n_windows: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// `N_FOLDS` disjoint lists covering `train`.
    pub folds: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub dataset: String,
    pub subjects: Vec<SubjectSplit>,
}

/// Shuffles each subject's window indices with its own seeded stream, takes
/// the first `round(0.2 n)` as test and deals the rest round-robin into
/// folds. Index lists are stored sorted.
pub fn make_split(ds: &WindowedDataset, dataset: &str, seed: u64) -> Result<SplitManifest, EvalError> {
    let mut subjects = Vec::with_capacity(ds.subjects.len());
    for (si, sw) in ds.subjects.iter().enumerate() {
        let n = sw.windows.len();
        if n < MIN_SUBJECT_WINDOWS {
            return Err(EvalError::SubjectTooSmall { subject: sw.subject_id.clone(), n });
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut substream(seed, Domain::Split, si as u64));
        let n_test = math::round(TEST_FRACTION * n as f64) as usize;
        let mut test = idx[..n_test].to_vec();
        let mut train = idx[n_test..].to_vec();
        let mut folds = alloc::vec![Vec::new(); N_FOLDS];
        for (k, &i) in train.iter().enumerate() {
            folds[k % N_FOLDS].push(i);
        }
        test.sort_unstable();
        train.sort_unstable();
        for f in &mut folds {
            f.sort_unstable();
        }
        subjects.push(SubjectSplit { subject_id: sw.subject_id.clone(), n_windows: n, train, test, folds });
    }
    Ok(SplitManifest { seed, dataset: dataset.to_string(), subjects })
}

impl SplitManifest {
    /// Checks subject ids, window counts and the partition property.
    pub fn check(&self, ds: &WindowedDataset) -> Result<(), EvalError> {
        let mismatch = |m: String| Err(EvalError::ManifestMismatch(m));
        if self.subjects.len() != ds.subjects.len() {
            return mismatch(alloc::format!("{} subjects in split, {} in dataset", self.subjects.len(), ds.subjects.len()));
        }
        for (sp, sw) in self.subjects.iter().zip(&ds.subjects) {
            if sp.subject_id != sw.subject_id || sp.n_windows != sw.windows.len() {
                return mismatch(alloc::format!(
                    "split has {} with {} windows, dataset has {} with {}",
                    sp.subject_id,
                    sp.n_windows,
                    sw.subject_id,
                    sw.windows.len()
                ));
            }
            let mut seen = alloc::vec![0u8; sp.n_windows];
            for &i in sp.test.iter().chain(sp.folds.iter().flatten()) {
                match seen.get_mut(i) {
                    Some(s) => *s += 1,
                    None => return mismatch(alloc::format!("index {i} out of range for {}", sp.subject_id)),
                }
            }
            let train_total: usize = sp.folds.iter().map(Vec::len).sum();
            if seen.iter().any(|&c| c != 1) || train_total != sp.train.len() {
                return mismatch(alloc::format!("split of {} is not a partition", sp.subject_id));
            }
        }
        Ok(())
    }
}

fn gather(ds: &WindowedDataset, split: &SplitManifest, pick: impl Fn(&SubjectSplit) -> Vec<usize>) -> Vec<TaskData> {
    ds.subjects
        .iter()
        .zip(&split.subjects)
        .map(|(sw, sp)| {
            let idx = pick(sp);
            TaskData {
                task_id: sw.subject_id.clone(),
                inputs: idx.iter().map(|&i| sw.windows[i].values.to_vec()).collect(),
                targets: idx.iter().map(|&i| sw.windows[i].label).collect(),
            }
        })
        .collect()
}

pub fn train_data(ds: &WindowedDataset, split: &SplitManifest) -> Vec<TaskData> {
    gather(ds, split, |sp| sp.train.clone())
}

pub fn test_data(ds: &WindowedDataset, split: &SplitManifest) -> Vec<TaskData> {
    gather(ds, split, |sp| sp.test.clone())
}

/// Training data without fold `k`, and fold `k` itself.
pub fn fold_data(ds: &WindowedDataset, split: &SplitManifest, k: usize) -> (Vec<TaskData>, Vec<TaskData>) {
    let fit = gather(ds, split, |sp| {
        let mut v: Vec<usize> = sp.folds.iter().enumerate().filter(|(j, _)| *j != k).flat_map(|(_, f)| f.iter().copied()).collect();
        v.sort_unstable();
        v
    });
    let val = gather(ds, split, |sp| sp.folds[k].clone());
    (fit, val)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch(truth.len(), pred.len()));
        }
        let mut cm = Self::default();
        for (t, p) in truth.iter().zip(pred) {
            cm.add(*t, *p);
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: Label, pred: Label) {
        match (truth, pred) {
            (Label::Stress, Label::Stress) => self.tp += 1,
            (Label::Baseline, Label::Stress) => self.fp += 1,
            (Label::Stress, Label::Baseline) => self.fn_ += 1,
            (Label::Baseline, Label::Baseline) => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Positive-class F1, `2tp / (2tp + fp + fn)`; 0 when the denominator is 0.
pub fn f1_score(cm: &ConfusionMatrix) -> f64 {
    let den = 2 * cm.tp + cm.fp + cm.fn_;
    if den == 0 {
        return 0.0;
    }
    (2 * cm.tp) as f64 / den as f64
}

/// Cohen's kappa from integer counts: `(n·agree − a) / (n² − a)` with `a`
/// the chance term `Σ_c rows_c · cols_c`. 0 when chance agreement is 1.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = cm.total() as i128;
    if n == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let (tp, fp, fn_, tn) = (cm.tp as i128, cm.fp as i128, cm.fn_ as i128, cm.tn as i128);
    let chance = (tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn);
    let den = n * n - chance;
    if den == 0 {
        return Ok(0.0);
    }
    Ok((n * (tp + tn) - chance) as f64 / den as f64)
}

/// Mean and population std, independent of input order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, math::sqrt(dev.iter().sum::<f64>() / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<Hyper>,
    /// `scores[h][k]`: validation F1 of grid point `h` on fold `k`.
    pub scores: Vec<Vec<f64>>,
    pub mean_scores: Vec<f64>,
    pub best_index: usize,
    pub best: Hyper,
}

/// Highest mean score wins; exact ties go to the stronger regularizer.
pub fn select_best(grid: &[Hyper], scores: Vec<Vec<f64>>) -> Result<CvResult, EvalError> {
    if grid.is_empty() || scores.len() != grid.len() {
        return Err(EvalError::EmptyGrid);
    }
    let mean_scores: Vec<f64> = scores.iter().map(|s| mean_std(s).0).collect();
    let mut best_index = 0;
    for h in 1..grid.len() {
        let better = match mean_scores[h].total_cmp(&mean_scores[best_index]) {
            Ordering::Greater => true,
            Ordering::Equal => grid[h].regularization_cmp(&grid[best_index]) == Ordering::Greater,
            Ordering::Less => false,
        };
        if better {
            best_index = h;
        }
    }
    Ok(CvResult { grid: grid.to_vec(), scores, mean_scores, best_index, best: grid[best_index] })
}

/// Sequential k-fold search. `score(h, k)` trains with grid point `h` on
/// every fold but `k` and returns the validation F1 on fold `k`.
pub fn run_cv<F>(grid: &[Hyper], n_folds: usize, mut score: F) -> Result<CvResult, EvalError>
where
    F: FnMut(&Hyper, usize) -> Result<f64, ModelError>,
{
    let mut scores = Vec::with_capacity(grid.len());
    for h in grid {
        let mut row = Vec::with_capacity(n_folds);
        for k in 0..n_folds {
            row.push(score(h, k).map_err(|source| EvalError::Fold { fold: k, hyper: h.to_string(), source })?);
        }
        scores.push(row);
    }
    select_best(grid, scores)
}

/// F1 over all windows of `data`, pooled across subjects.
pub fn pooled_f1(model: &TrainedModel, data: &[TaskData]) -> Result<f64, ModelError> {
    let mut cm = ConfusionMatrix::default();
    for t in data {
        for (x, y) in t.inputs.iter().zip(&t.targets) {
            cm.add(*y, model.predict(&t.task_id, x)?.label);
        }
    }
    Ok(f1_score(&cm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub f1: f64,
    pub kappa: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub name: String,
    pub per_subject: Vec<SubjectMetrics>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_kappa: f64,
    pub std_kappa: f64,
}

impl ModelMetrics {
    pub fn from_subjects(name: &str, per_subject: Vec<SubjectMetrics>) -> Self {
        let f1: Vec<f64> = per_subject.iter().map(|s| s.f1).collect();
        let kappa: Vec<f64> = per_subject.iter().map(|s| s.kappa).collect();
        let (mean_f1, std_f1) = mean_std(&f1);
        let (mean_kappa, std_kappa) = mean_std(&kappa);
        Self { name: name.to_string(), per_subject, mean_f1, std_f1, mean_kappa, std_kappa }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub seed: u64,
    pub models: Vec<ModelMetrics>,
}

impl MetricsReport {
    pub fn model(&self, name: &str) -> Option<&ModelMetrics> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Test-set F1 and kappa of one model for every subject in `test`.
pub fn evaluate_model(name: &str, model: &TrainedModel, test: &[TaskData]) -> Result<ModelMetrics, EvalError> {
    let mut per_subject = Vec::with_capacity(test.len());
    for t in test {
        let pred = model.predict_labels(&t.task_id, &t.inputs)?;
        let cm = ConfusionMatrix::from_labels(&t.targets, &pred)?;
        per_subject.push(SubjectMetrics {
            subject_id: t.task_id.clone(),
            f1: f1_score(&cm),
            kappa: cohen_kappa(&cm)?,
            n_test: t.inputs.len(),
        });
    }
    Ok(ModelMetrics::from_subjects(name, per_subject))
}

/// Evaluates several trained models on the test split into one report.
pub fn evaluate_all(
    models: &[(&str, &TrainedModel)],
    ds: &WindowedDataset,
    split: &SplitManifest,
) -> Result<MetricsReport, EvalError> {
    split.check(ds)?;
    let test = test_data(ds, split);
    let models = models.iter().map(|(name, m)| evaluate_model(name, m, &test)).collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport { dataset: split.dataset.clone(), seed: split.seed, models })
}
