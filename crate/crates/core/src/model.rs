//! Uniform front end over the five model families: fitting from per-subject
//! examples, hyperparameter grids, and prediction routed by subject.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineError, Kernel, LogRegConfig, LogRegModel, Prediction, SvmConfig, SvmModel};
use crate::math;
use crate::nn::{train_mtl, Architecture, MtlNetwork, NnError, TaskData, TrainConfig, TrainingLog};
use crate::signal::Label;

/// Task id of the single head used by the subject-independent network.
pub const POOLED_TASK: &str = "pooled";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lr")]
    Lr,
    #[serde(rename = "svm-l")]
    SvmLinear,
    #[serde(rename = "svm-rbf")]
    SvmRbf,
    #[serde(rename = "st-nn")]
    StNn,
    #[serde(rename = "mt-nn")]
    MtNn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lr, ModelKind::SvmLinear, ModelKind::SvmRbf, ModelKind::StNn, ModelKind::MtNn];

    pub fn cli_name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::SvmLinear => "svm-l",
            ModelKind::SvmRbf => "svm-rbf",
            ModelKind::StNn => "st-nn",
            ModelKind::MtNn => "mt-nn",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::SvmLinear => "SVM (L)",
            ModelKind::SvmRbf => "SVM (RBF)",
            ModelKind::StNn => "ST-NN",
            ModelKind::MtNn => "MT-NN",
        }
    }

    pub fn is_personalized(self) -> bool {
        self == ModelKind::MtNn
    }

    pub fn index(self) -> u64 {
        self as u64
    }

    pub fn default_grid(self) -> Vec<Hyper> {
        const LAMBDAS: [f64; 3] = [1e-4, 1e-3, 1e-2];
        const CS: [f64; 3] = [0.1, 1.0, 10.0];
        const GAMMAS: [f64; 3] = [0.01, 0.1, 1.0];
        match self {
            ModelKind::Lr | ModelKind::StNn | ModelKind::MtNn => LAMBDAS.iter().map(|&l| Hyper::L2 { lambda: l }).collect(),
            ModelKind::SvmLinear => CS.iter().map(|&c| Hyper::Svm { c, gamma: None }).collect(),
            ModelKind::SvmRbf => CS
                .iter()
                .flat_map(|&c| GAMMAS.iter().map(move |&g| Hyper::Svm { c, gamma: Some(g) }))
                .collect(),
        }
    }

    pub fn accepts(self, h: &Hyper) -> bool {
        matches!(
            (self, h),
            (ModelKind::Lr | ModelKind::StNn | ModelKind::MtNn, Hyper::L2 { .. })
                | (ModelKind::SvmLinear, Hyper::Svm { gamma: None, .. })
                | (ModelKind::SvmRbf, Hyper::Svm { gamma: Some(_), .. })
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown model kind {0:?} (expected lr, svm-l, svm-rbf, st-nn or mt-nn)")]
pub struct UnknownModelKind(pub String);

impl FromStr for ModelKind {
    type Err = UnknownModelKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| UnknownModelKind(s.to_string()))
    }
}

/// One point of a hyperparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Hyper {
    L2 { lambda: f64 },
    Svm { c: f64, gamma: Option<f64> },
}

impl Hyper {
    /// `Greater` when `self` regularizes more strongly than `other`: larger
    /// λ, smaller C, then smaller γ.
    pub fn regularization_cmp(&self, other: &Hyper) -> Ordering {
        match (self, other) {
            (Hyper::L2 { lambda: a }, Hyper::L2 { lambda: b }) => a.total_cmp(b),
            (Hyper::Svm { c: c1, gamma: g1 }, Hyper::Svm { c: c2, gamma: g2 }) => c2
                .total_cmp(c1)
                .then_with(|| g2.unwrap_or(0.0).total_cmp(&g1.unwrap_or(0.0))),
            (Hyper::L2 { .. }, Hyper::Svm { .. }) => Ordering::Less,
            (Hyper::Svm { .. }, Hyper::L2 { .. }) => Ordering::Greater,
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Hyper::L2 { lambda } => write!(f, "lambda={lambda}"),
            Hyper::Svm { c, gamma: None } => write!(f, "C={c}"),
            Hyper::Svm { c, gamma: Some(g) } => write!(f, "C={c} gamma={g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("no head was trained for subject {0:?}")]
    TaskMissingHead(String),
    #[error("hyperparameters {hyper} do not fit model kind {kind}")]
    HyperMismatch { kind: ModelKind, hyper: String },
    #[error("no training examples")]
    NoData,
    #[error("expected {expected} features, got {got}")]
    DimMismatch { expected: usize, got: usize },
}

/// Per-feature z-scoring fitted on training rows. Constant columns keep a
/// unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a, I>(rows: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let dim = rows.first().ok_or(ModelError::NoData)?.len();
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(ModelError::DimMismatch { expected: dim, got: r.len() });
        }
        let mut mean = Vec::with_capacity(dim);
        let mut scale = Vec::with_capacity(dim);
        let mut col = Vec::with_capacity(rows.len());
        for j in 0..dim {
            col.clear();
            col.extend(rows.iter().map(|r| r[j]));
            mean.push(math::mean(&col));
            let s = math::pop_std(&col);
            scale.push(if s > 1e-12 { s } else { 1.0 });
        }
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self { mean: alloc::vec![0.0; dim], scale: alloc::vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::DimMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    LogReg(LogRegModel),
    Svm(SvmModel),
    Network(MtlNetwork),
}

/// Settings shared by every fit call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub nn: TrainConfig,
    pub arch: Architecture,
    pub logreg: LogRegConfig,
    pub svm_tol: f64,
    pub svm_max_passes: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            nn: TrainConfig::default(),
            arch: Architecture::default(),
            logreg: LogRegConfig::default(),
            svm_tol: 1e-3,
            svm_max_passes: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub hyper: Hyper,
    pub standardizer: Standardizer,
    pub params: ModelParams,
    pub training_log: Option<TrainingLog>,
}

fn pooled<'a>(data: &'a [TaskData]) -> (Vec<&'a [f64]>, Vec<Label>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in data {
        x.extend(t.inputs.iter().map(|r| r.as_slice()));
        y.extend_from_slice(&t.targets);
    }
    (x, y)
}

/// Fits `kind` on per-subject training data. Every kind except MT-NN pools
/// the subjects into one training set. `seed` drives network init and
/// task sampling.
pub fn fit(kind: ModelKind, hyper: Hyper, data: &[TaskData], cfg: &FitConfig, seed: u64) -> Result<TrainedModel, ModelError> {
    if !kind.accepts(&hyper) {
        return Err(ModelError::HyperMismatch { kind, hyper: hyper.to_string() });
    }
    let (raw_x, raw_y) = pooled(data);
    if raw_x.is_empty() {
        return Err(ModelError::NoData);
    }
    let standardizer = Standardizer::fit(raw_x.iter().copied())?;
    let zx = raw_x.iter().map(|r| standardizer.apply(r)).collect::<Result<Vec<_>, _>>()?;

    let mut training_log = None;
    let params = match (kind, hyper) {
        (ModelKind::Lr, Hyper::L2 { lambda }) => ModelParams::LogReg(baselines::train_logreg(&zx, &raw_y, lambda, &cfg.logreg)?),
        (ModelKind::SvmLinear | ModelKind::SvmRbf, Hyper::Svm { c, gamma }) => {
            let kernel = match gamma {
                Some(gamma) => Kernel::Rbf { gamma },
                None => Kernel::Linear,
            };
            let svm_cfg = SvmConfig { c, tol: cfg.svm_tol, max_passes: cfg.svm_max_passes };
            ModelParams::Svm(baselines::train_svm(&zx, &raw_y, kernel, &svm_cfg)?)
        }
        (ModelKind::StNn | ModelKind::MtNn, Hyper::L2 { lambda }) => {
            let tasks: Vec<TaskData> = if kind == ModelKind::StNn {
                alloc::vec![TaskData { task_id: POOLED_TASK.to_string(), inputs: zx, targets: raw_y }]
            } else {
                let mut rows = zx.into_iter();
                data.iter()
                    .map(|t| TaskData {
                        task_id: t.task_id.clone(),
                        inputs: rows.by_ref().take(t.inputs.len()).collect(),
                        targets: t.targets.clone(),
                    })
                    .collect()
            };
            let ids: Vec<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
            let arch = Architecture { input_dim: standardizer.dim(), ..cfg.arch };
            let net = MtlNetwork::new(arch, &ids, seed);
            let nn_cfg = TrainConfig { l2_lambda: lambda, seed, ..cfg.nn };
            let (net, log) = train_mtl(net, &tasks, &nn_cfg)?;
            training_log = Some(log);
            ModelParams::Network(net)
        }
        _ => unreachable!("accepts() checked the pairing"),
    };
    Ok(TrainedModel { kind, hyper, standardizer, params, training_log })
}

impl TrainedModel {
    /// Predicts one raw (unstandardized) feature vector of `subject`.
    pub fn predict(&self, subject: &str, x: &[f64]) -> Result<Prediction, ModelError> {
        let z = self.standardizer.apply(x)?;
        Ok(match &self.params {
            ModelParams::LogReg(m) => m.predict(&z)?,
            ModelParams::Svm(m) => m.predict(&z)?,
            ModelParams::Network(net) => {
                let task = if self.kind.is_personalized() { subject } else { POOLED_TASK };
                if net.branch(task).is_err() {
                    return Err(ModelError::TaskMissingHead(subject.to_string()));
                }
                let p = net.forward(&z, task)?;
                Prediction { label: if p >= 0.5 { Label::Stress } else { Label::Baseline }, score: p }
            }
        })
    }

    pub fn predict_labels(&self, subject: &str, xs: &[Vec<f64>]) -> Result<Vec<Label>, ModelError> {
        xs.iter().map(|x| self.predict(subject, x).map(|p| p.label)).collect()
    }

    /// Subjects with a dedicated head (empty for pooled models).
    pub fn heads(&self) -> Vec<&str> {
        match (&self.params, self.kind.is_personalized()) {
            (ModelParams::Network(net), true) => net.task_ids().collect(),
            _ => Vec::new(),
        }
    }

    /// Every learned number in a fixed order, for checksums.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.standardizer.mean.iter().chain(&self.standardizer.scale).copied().collect();
        match &self.params {
            ModelParams::LogReg(m) => {
                out.extend_from_slice(&m.weights);
                out.push(m.bias);
            }
            ModelParams::Svm(m) => {
                for sv in &m.support_vectors {
                    out.extend_from_slice(sv);
                }
                out.extend_from_slice(&m.dual_coefs);
                out.push(m.bias);
            }
            ModelParams::Network(net) => out.extend(net.parameters()),
        }
        out
    }
}

/// Groups examples by subject id, keeping first-appearance order.
pub fn group_by_task(rows: impl IntoIterator<Item = (String, Vec<f64>, Label)>) -> Vec<TaskData> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, TaskData> = BTreeMap::new();
    for (id, x, y) in rows {
        let entry = map.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            TaskData { task_id: id, inputs: Vec::new(), targets: Vec::new() }
        });
        entry.inputs.push(x);
        entry.targets.push(y);
    }
    order.into_iter().filter_map(|id| map.remove(&id)).collect()
}
