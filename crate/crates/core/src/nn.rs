//! Dense networks with hard parameter sharing.
//!
//! A [`MtlNetwork`] has one shared ELU layer feeding a private ELU layer and a
//! sigmoid head per task. A single-task network (one branch) is the
//! subject-independent baseline. Training alternates between tasks: every
//! step samples a task uniformly, draws a mini-batch from it and applies one
//! Adam update to the shared layer and that task's branch only.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::rng::{substream, Domain};
use crate::signal::Label;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the loss.
pub const PROB_CLIP: f64 = 1e-7;
pub const DEFAULT_ELU_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("task {task:?} has {n} examples, need at least {needed}")]
    TaskTooSmall { task: String, n: usize, needed: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error("no tasks to train")]
    NoTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Sigmoid,
    Identity,
}

/// `alpha * (e^x - 1)` for negative `x`, otherwise `x`.
pub fn elu(x: f64, alpha: f64) -> f64 {
    if x < 0.0 {
        alpha * (math::exp(x) - 1.0)
    } else {
        x
    }
}

pub fn elu_derivative(x: f64, alpha: f64) -> f64 {
    if x < 0.0 {
        alpha * math::exp(x)
    } else {
        1.0
    }
}

impl Activation {
    pub fn apply(self, x: f64, alpha: f64) -> f64 {
        match self {
            Activation::Elu => elu(x, alpha),
            Activation::Sigmoid => math::sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and its output.
    fn derivative(self, pre: f64, post: f64, alpha: f64) -> f64 {
        match self {
            Activation::Elu => {
                if pre < 0.0 {
                    post + alpha
                } else {
                    1.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }
}

/// Glorot-uniform matrix of shape `rows × cols`, row-major.
pub fn glorot_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let limit = math::sqrt(6.0 / (rows + cols) as f64);
    (0..rows * cols).map(|_| (2.0 * rng.random::<f64>() - 1.0) * limit).collect()
}

/// Fully connected layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs], activation }
    }

    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        Self { inputs, outputs, weights: glorot_init(outputs, inputs, rng), biases: vec![0.0; outputs], activation }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs && self.biases.len() == self.outputs
    }

    fn forward_into(&self, x: &[f64], pre: &mut [f64], post: &mut [f64], alpha: f64) {
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let z = self.biases[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            pre[o] = z;
            post[o] = self.activation.apply(z, alpha);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBranch {
    pub hidden: DenseLayer,
    pub head: DenseLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub shared_units: usize,
    pub task_units: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { input_dim: crate::N_FEATURES, shared_units: 200, task_units: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MtlNetwork {
    pub shared: DenseLayer,
    pub tasks: BTreeMap<String, TaskBranch>,
    pub elu_alpha: f64,
}

/// Activations of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub shared_pre: Vec<f64>,
    pub shared_post: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden_post: Vec<f64>,
    pub logit: f64,
    pub p: f64,
}

impl MtlNetwork {
    /// Glorot-initialised network; the shared layer is drawn first, then the
    /// branches in task-id order.
    pub fn new<S: AsRef<str>>(arch: Architecture, task_ids: &[S], seed: u64) -> Self {
        let mut rng = substream(seed, Domain::Init, 0);
        let shared = DenseLayer::glorot(arch.input_dim, arch.shared_units, Activation::Elu, &mut rng);
        let mut ids: Vec<&str> = task_ids.iter().map(|s| s.as_ref()).collect();
        ids.sort_unstable();
        ids.dedup();
        let tasks = ids
            .into_iter()
            .map(|id| {
                let hidden = DenseLayer::glorot(arch.shared_units, arch.task_units, Activation::Elu, &mut rng);
                let head = DenseLayer::glorot(arch.task_units, 1, Activation::Sigmoid, &mut rng);
                (id.to_string(), TaskBranch { hidden, head })
            })
            .collect();
        Self { shared, tasks, elu_alpha: DEFAULT_ELU_ALPHA }
    }

    pub fn zeros<S: AsRef<str>>(arch: Architecture, task_ids: &[S]) -> Self {
        let tasks = task_ids
            .iter()
            .map(|id| {
                let branch = TaskBranch {
                    hidden: DenseLayer::zeros(arch.shared_units, arch.task_units, Activation::Elu),
                    head: DenseLayer::zeros(arch.task_units, 1, Activation::Sigmoid),
                };
                (id.as_ref().to_string(), branch)
            })
            .collect();
        Self {
            shared: DenseLayer::zeros(arch.input_dim, arch.shared_units, Activation::Elu),
            tasks,
            elu_alpha: DEFAULT_ELU_ALPHA,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.shared.inputs,
            shared_units: self.shared.outputs,
            task_units: self.tasks.values().next().map_or(0, |b| b.hidden.outputs),
        }
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.tasks.keys().map(|k| k.as_str())
    }

    pub fn branch(&self, task: &str) -> Result<&TaskBranch, NnError> {
        self.tasks.get(task).ok_or_else(|| NnError::UnknownTask(task.to_string()))
    }

    /// Checks every layer shape against the architecture.
    pub fn is_consistent(&self) -> bool {
        let a = self.architecture();
        self.shared.is_consistent()
            && self.tasks.values().all(|b| {
                b.hidden.is_consistent()
                    && b.head.is_consistent()
                    && b.hidden.inputs == a.shared_units
                    && b.hidden.outputs == a.task_units
                    && b.head.inputs == a.task_units
                    && b.head.outputs == 1
            })
    }

    /// All parameters in canonical order: shared weights, shared biases, then
    /// for each task (sorted) hidden weights, hidden biases, head weights,
    /// head biases.
    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        fn layer(l: &DenseLayer) -> impl Iterator<Item = f64> + '_ {
            l.weights.iter().chain(l.biases.iter()).copied()
        }
        layer(&self.shared).chain(self.tasks.values().flat_map(|b| layer(&b.hidden).chain(layer(&b.head))))
    }

    pub fn trace(&self, x: &[f64], task: &str) -> Result<Trace, NnError> {
        let mut t = Trace::default();
        self.trace_into(x, task, &mut t)?;
        Ok(t)
    }

    fn trace_into(&self, x: &[f64], task: &str, t: &mut Trace) -> Result<(), NnError> {
        if x.len() != self.shared.inputs {
            return Err(NnError::ShapeMismatch { expected: self.shared.inputs, got: x.len() });
        }
        let branch = self.branch(task)?;
        let a = self.elu_alpha;
        t.shared_pre.resize(self.shared.outputs, 0.0);
        t.shared_post.resize(self.shared.outputs, 0.0);
        t.hidden_pre.resize(branch.hidden.outputs, 0.0);
        t.hidden_post.resize(branch.hidden.outputs, 0.0);
        self.shared.forward_into(x, &mut t.shared_pre, &mut t.shared_post, a);
        branch.hidden.forward_into(&t.shared_post, &mut t.hidden_pre, &mut t.hidden_post, a);
        let (mut z, mut p) = ([0.0], [0.0]);
        branch.head.forward_into(&t.hidden_post, &mut z, &mut p, a);
        t.logit = z[0];
        t.p = p[0];
        Ok(())
    }

    /// Stress probability of `x` under the head of `task`.
    pub fn forward(&self, x: &[f64], task: &str) -> Result<f64, NnError> {
        Ok(self.trace(x, task)?.p)
    }

    /// `λ (‖W_hidden‖² + ‖W_head‖²)` of one task; shared weights and biases
    /// are never penalised.
    pub fn l2_penalty(&self, task: &str, l2_lambda: f64) -> Result<f64, NnError> {
        let b = self.branch(task)?;
        Ok(l2_lambda * (b.hidden.weight_sq_norm() + b.head.weight_sq_norm()))
    }
}

/// Binary cross-entropy of a clipped probability.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
    -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p))
}

/// Per-example objective: clipped BCE plus the task's L2 penalty.
pub fn bce_loss(p: f64, y: f64, net: &MtlNetwork, task: &str, l2_lambda: f64) -> Result<f64, NnError> {
    Ok(bce(p, y) + net.l2_penalty(task, l2_lambda)?)
}

/// Derivative of the clipped BCE with respect to the head logit.
fn bce_logit_grad(p: f64, y: f64) -> f64 {
    if p > PROB_CLIP && p < 1.0 - PROB_CLIP {
        p - y
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerGrad {
    pub fn zeros_like(l: &DenseLayer) -> Self {
        Self { weights: vec![0.0; l.weights.len()], biases: vec![0.0; l.biases.len()] }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }
}

/// Gradient of one task's objective. Every other task's gradient is zero and
/// therefore not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub task_id: String,
    pub shared: LayerGrad,
    pub hidden: LayerGrad,
    pub head: LayerGrad,
}

impl Gradients {
    pub fn zeros(net: &MtlNetwork, task: &str) -> Result<Self, NnError> {
        let b = net.branch(task)?;
        Ok(Self {
            task_id: task.to_string(),
            shared: LayerGrad::zeros_like(&net.shared),
            hidden: LayerGrad::zeros_like(&b.hidden),
            head: LayerGrad::zeros_like(&b.head),
        })
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.shared.values().chain(self.hidden.values()).chain(self.head.values())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.shared.values_mut().chain(self.hidden.values_mut()).chain(self.head.values_mut())
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.values().map(|g| g * g).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    fn scale(&mut self, f: f64) {
        for g in self.values_mut() {
            *g *= f;
        }
    }

    fn clear(&mut self) {
        for g in self.values_mut() {
            *g = 0.0;
        }
    }

    fn add_l2(&mut self, b: &TaskBranch, l2_lambda: f64) {
        for (g, w) in self.hidden.weights.iter_mut().zip(&b.hidden.weights) {
            *g += 2.0 * l2_lambda * w;
        }
        for (g, w) in self.head.weights.iter_mut().zip(&b.head.weights) {
            *g += 2.0 * l2_lambda * w;
        }
    }
}

/// Scratch buffers reused across examples.
#[derive(Debug, Default)]
struct Workspace {
    trace: Trace,
    d_hidden: Vec<f64>,
    d_shared: Vec<f64>,
}

/// Adds the data-term gradient of one example to `g`; returns its BCE.
fn accumulate(
    net: &MtlNetwork,
    branch: &TaskBranch,
    x: &[f64],
    y: f64,
    g: &mut Gradients,
    ws: &mut Workspace,
) -> Result<f64, NnError> {
    net.trace_into(x, &g.task_id, &mut ws.trace)?;
    let t = &ws.trace;
    let alpha = net.elu_alpha;
    let dz = bce_logit_grad(t.p, y);
    let (hidden, head) = (&branch.hidden, &branch.head);

    for (gw, h) in g.head.weights.iter_mut().zip(&t.hidden_post) {
        *gw += dz * h;
    }
    g.head.biases[0] += dz;

    ws.d_hidden.resize(hidden.outputs, 0.0);
    for j in 0..hidden.outputs {
        ws.d_hidden[j] =
            head.weights[j] * dz * hidden.activation.derivative(t.hidden_pre[j], t.hidden_post[j], alpha);
    }

    let n_shared = hidden.inputs;
    ws.d_shared.clear();
    ws.d_shared.resize(n_shared, 0.0);
    for j in 0..hidden.outputs {
        let dj = ws.d_hidden[j];
        if dj == 0.0 {
            continue;
        }
        let row = &hidden.weights[j * n_shared..(j + 1) * n_shared];
        let grow = &mut g.hidden.weights[j * n_shared..(j + 1) * n_shared];
        for k in 0..n_shared {
            grow[k] += dj * t.shared_post[k];
            ws.d_shared[k] += row[k] * dj;
        }
        g.hidden.biases[j] += dj;
    }

    let shared = &net.shared;
    let n_in = shared.inputs;
    for k in 0..shared.outputs {
        let dk = ws.d_shared[k] * shared.activation.derivative(t.shared_pre[k], t.shared_post[k], alpha);
        if dk == 0.0 {
            continue;
        }
        let grow = &mut g.shared.weights[k * n_in..(k + 1) * n_in];
        for (gw, xi) in grow.iter_mut().zip(x) {
            *gw += dk * xi;
        }
        g.shared.biases[k] += dk;
    }
    Ok(bce(t.p, y))
}

/// Exact gradient of [`bce_loss`] for one example with respect to the shared
/// layer and the branch of `task`.
pub fn backward(net: &MtlNetwork, x: &[f64], y: f64, task: &str, l2_lambda: f64) -> Result<Gradients, NnError> {
    let branch = net.branch(task)?;
    let mut g = Gradients::zeros(net, task)?;
    accumulate(net, branch, x, y, &mut g, &mut Workspace::default())?;
    g.add_l2(branch, l2_lambda);
    Ok(g)
}

/// Gradient of the mean per-example objective over a batch; returns the mean
/// BCE (without penalty) alongside.
pub fn batch_gradient(
    net: &MtlNetwork,
    task: &str,
    inputs: &[&[f64]],
    targets: &[f64],
    l2_lambda: f64,
) -> Result<(Gradients, f64), NnError> {
    let mut g = Gradients::zeros(net, task)?;
    let mut ws = Workspace::default();
    let loss = batch_gradient_into(net, inputs, targets, l2_lambda, &mut g, &mut ws)?;
    Ok((g, loss))
}

fn batch_gradient_into(
    net: &MtlNetwork,
    inputs: &[&[f64]],
    targets: &[f64],
    l2_lambda: f64,
    g: &mut Gradients,
    ws: &mut Workspace,
) -> Result<f64, NnError> {
    if inputs.len() != targets.len() {
        return Err(NnError::ShapeMismatch { expected: inputs.len(), got: targets.len() });
    }
    let branch = net.branch(&g.task_id)?;
    g.clear();
    let mut loss = 0.0;
    for (x, &y) in inputs.iter().zip(targets) {
        loss += accumulate(net, branch, x, y, g, ws)?;
    }
    let n = inputs.len().max(1) as f64;
    g.scale(1.0 / n);
    g.add_l2(branch, l2_lambda);
    Ok(loss / n)
}

/// Adam moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr, beta1, beta2, eps }
    }

    pub fn from_config(n: usize, cfg: &TrainConfig) -> Self {
        Self::new(n, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    }

    /// One bias-corrected Adam update over `params`, which may be split over
    /// several slices laid out consecutively in the moment vectors.
    pub fn step_parts(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<(), NnError> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        let gtotal: usize = grads.iter().map(|g| g.len()).sum();
        if total != self.m.len() || gtotal != total || params.len() != grads.len() {
            return Err(NnError::ShapeMismatch { expected: self.m.len(), got: total.max(gtotal) });
        }
        if params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(NnError::ShapeMismatch { expected: total, got: gtotal });
        }
        self.t += 1;
        let t = self.t as f64;
        let c1 = 1.0 - math::powf(self.beta1, t);
        let c2 = 1.0 - math::powf(self.beta2, t);
        let mut i = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            for (theta, &gi) in p.iter_mut().zip(g.iter()) {
                let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
                let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
                self.m[i] = m;
                self.v[i] = v;
                *theta -= self.lr * (m / c1) / (math::sqrt(v / c2) + self.eps);
                i += 1;
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        self.step_parts(&mut [params], &[grads])
    }

    pub fn step_layer(&mut self, layer: &mut DenseLayer, grad: &LayerGrad) -> Result<(), NnError> {
        self.step_parts(&mut [&mut layer.weights, &mut layer.biases], &[&grad.weights, &grad.biases])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2_lambda: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 10,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(NnError::BadConfig("lr must be positive"));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(NnError::BadConfig("beta1 and beta2 must lie in (0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(NnError::BadConfig("eps must be positive"));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return Err(NnError::BadConfig("l2_lambda must be non-negative"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(NnError::BadConfig("batch_size, max_epochs and patience must be positive"));
        }
        if !unit(self.val_fraction) {
            return Err(NnError::BadConfig("val_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Training examples of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: String,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean BCE over every training example at the end of the epoch.
    pub train_loss: f64,
    /// Mean over tasks of each task's mean validation BCE.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub steps_per_epoch: usize,
}

/// Fewest examples a task may bring to training.
pub const MIN_TASK_EXAMPLES: usize = 5;

struct TaskSplit<'a> {
    id: &'a str,
    data: &'a TaskData,
    train: Vec<usize>,
    val: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    state_hidden: AdamState,
    state_head: AdamState,
}

impl TaskSplit<'_> {
    fn next_batch<R: Rng>(&mut self, size: usize, rng: &mut R, out: &mut Vec<usize>) {
        if self.cursor >= self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + size).min(self.order.len());
        out.clear();
        out.extend_from_slice(&self.order[self.cursor..end]);
        self.cursor = end;
    }
}

fn mean_bce(net: &MtlNetwork, task: &str, data: &TaskData, idx: &[usize], ws: &mut Workspace) -> Result<f64, NnError> {
    let mut total = 0.0;
    for &i in idx {
        net.trace_into(&data.inputs[i], task, &mut ws.trace)?;
        total += bce(ws.trace.p, data.targets[i].as_f64());
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Alternating-task training with validation-based early stopping.
///
/// Each task holds out `val_fraction` of its examples. An epoch is
/// `ceil(total training examples / batch_size)` steps; each step picks a task
/// uniformly at random and updates the shared layer and that task's branch
/// with one mini-batch. Training stops once the validation loss has not
/// improved for `patience` epochs, and the parameters of the best epoch are
/// returned.
pub fn train_mtl(
    mut net: MtlNetwork,
    data: &[TaskData],
    cfg: &TrainConfig,
) -> Result<(MtlNetwork, TrainingLog), NnError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NnError::NoTasks);
    }
    let mut rng = substream(cfg.seed, Domain::Train, 0);
    let mut tasks: Vec<TaskSplit<'_>> = Vec::with_capacity(data.len());
    for d in data {
        let branch = net.branch(&d.task_id)?;
        let n = d.inputs.len();
        if d.targets.len() != n {
            return Err(NnError::ShapeMismatch { expected: n, got: d.targets.len() });
        }
        if n < MIN_TASK_EXAMPLES {
            return Err(NnError::TaskTooSmall { task: d.task_id.clone(), n, needed: MIN_TASK_EXAMPLES });
        }
        if let Some(x) = d.inputs.iter().find(|x| x.len() != net.shared.inputs) {
            return Err(NnError::ShapeMismatch { expected: net.shared.inputs, got: x.len() });
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let n_val = (math::round(cfg.val_fraction * n as f64) as usize).clamp(1, n - 1);
        let val = idx[..n_val].to_vec();
        let train = idx[n_val..].to_vec();
        tasks.push(TaskSplit {
            id: &d.task_id,
            data: d,
            order: train.clone(),
            train,
            val,
            cursor: 0,
            state_hidden: AdamState::from_config(branch.hidden.param_count(), cfg),
            state_head: AdamState::from_config(branch.head.param_count(), cfg),
        });
    }
    for t in &mut tasks {
        t.order.shuffle(&mut rng);
    }
    let total_train: usize = tasks.iter().map(|t| t.train.len()).sum();
    let steps_per_epoch = total_train.div_ceil(cfg.batch_size);

    let mut shared_state = AdamState::from_config(net.shared.param_count(), cfg);
    let mut ws = Workspace::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    let mut inputs: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut targets: Vec<f64> = Vec::with_capacity(cfg.batch_size);
    let first = tasks[0].id;
    let mut grads = Gradients::zeros(&net, first)?;

    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        steps_per_epoch,
    };
    let mut best = net.clone();
    let mut stale = 0usize;

    for epoch in 1..=cfg.max_epochs {
        for _ in 0..steps_per_epoch {
            let ti = rng.random_range(0..tasks.len());
            let task = &mut tasks[ti];
            task.next_batch(cfg.batch_size, &mut rng, &mut batch);
            inputs.clear();
            targets.clear();
            for &i in &batch {
                inputs.push(&task.data.inputs[i]);
                targets.push(task.data.targets[i].as_f64());
            }
            grads.task_id.clear();
            grads.task_id.push_str(task.id);
            batch_gradient_into(&net, &inputs, &targets, cfg.l2_lambda, &mut grads, &mut ws)?;
            if !grads.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch });
            }
            shared_state.step_layer(&mut net.shared, &grads.shared)?;
            let branch = net.tasks.get_mut(task.id).ok_or_else(|| NnError::UnknownTask(task.id.to_string()))?;
            task.state_hidden.step_layer(&mut branch.hidden, &grads.hidden)?;
            task.state_head.step_layer(&mut branch.head, &grads.head)?;
        }

        let mut train_sum = 0.0;
        let mut val_sum = 0.0;
        for t in &tasks {
            train_sum += mean_bce(&net, t.id, t.data, &t.train, &mut ws)? * t.train.len() as f64;
            val_sum += mean_bce(&net, t.id, t.data, &t.val, &mut ws)?;
        }
        let train_loss = train_sum / total_train as f64;
        let val_loss = val_sum / tasks.len() as f64;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch });
        }
        log.epochs.push(EpochRecord { epoch, train_loss, val_loss });

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best.clone_from(&net);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, log))
}
