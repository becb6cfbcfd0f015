//! Reference classifiers: L2-regularised logistic regression and soft-margin
//! SVMs (linear and RBF kernels) trained by sequential minimal optimization.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::nn::AdamState;
use crate::signal::Label;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("training data is empty or inputs and targets differ in length")]
    BadData,
    #[error("vectors of dimension {0} and {1}")]
    DimMismatch(usize, usize),
    #[error("SMO did not reach tolerance {tol} within {iterations} iterations")]
    NoConvergence { tol: f64, iterations: usize },
    #[error("invalid hyperparameter: {0}")]
    BadHyper(&'static str),
    #[error("model has no parameters")]
    UntrainedModel,
}

fn check_data(x: &[Vec<f64>], y: &[Label]) -> Result<usize, BaselineError> {
    if x.is_empty() || x.len() != y.len() {
        return Err(BaselineError::BadData);
    }
    let dim = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != dim) {
        return Err(BaselineError::DimMismatch(dim, bad.len()));
    }
    let first = y[0];
    if y.iter().all(|&l| l == first) {
        return Err(BaselineError::SingleClassData);
    }
    Ok(dim)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classifier output: the hard label and the raw decision score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self { lr: 0.05, max_epochs: 20_000, grad_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
}

impl LogRegModel {
    pub fn probability(&self, x: &[f64]) -> f64 {
        math::sigmoid(dot(&self.weights, x) + self.bias)
    }

    /// Class 1 iff the probability is at least 1/2.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, BaselineError> {
        if self.weights.is_empty() {
            return Err(BaselineError::UntrainedModel);
        }
        if x.len() != self.weights.len() {
            return Err(BaselineError::DimMismatch(self.weights.len(), x.len()));
        }
        let score = self.probability(x);
        let label = if score >= 0.5 { Label::Stress } else { Label::Baseline };
        Ok(Prediction { label, score })
    }
}

/// Mean BCE plus `λ‖w‖²`, and its gradient with respect to `[w..., b]`.
fn logreg_objective(x: &[Vec<f64>], y: &[Label], w: &[f64], b: f64, l2: f64, grad: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let dim = w.len();
    grad.fill(0.0);
    let mut loss = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let z = dot(w, xi) + b;
        let t = yi.as_f64();
        // log(1 + e^z) - t z, evaluated without overflow
        loss += if z > 0.0 { z + math::ln(1.0 + math::exp(-z)) } else { math::ln(1.0 + math::exp(z)) } - t * z;
        let r = math::sigmoid(z) - t;
        for (g, v) in grad[..dim].iter_mut().zip(xi) {
            *g += r * v;
        }
        grad[dim] += r;
    }
    for g in grad.iter_mut() {
        *g /= n;
    }
    for (g, wi) in grad[..dim].iter_mut().zip(w) {
        *g += 2.0 * l2 * wi;
    }
    loss / n + l2 * dot(w, w)
}

/// Full-batch Adam from the zero vector until the gradient norm drops below
/// `grad_tol` or `max_epochs` passes.
pub fn train_logreg(
    x: &[Vec<f64>],
    y: &[Label],
    l2_lambda: f64,
    cfg: &LogRegConfig,
) -> Result<LogRegModel, BaselineError> {
    let dim = check_data(x, y)?;
    if !(l2_lambda >= 0.0) || !l2_lambda.is_finite() {
        return Err(BaselineError::BadHyper("l2_lambda must be non-negative"));
    }
    let mut params = vec![0.0; dim + 1];
    let mut grad = vec![0.0; dim + 1];
    let mut adam = AdamState::new(dim + 1, cfg.lr, 0.9, 0.999, 1e-8);
    for _ in 0..cfg.max_epochs {
        let (w, b) = params.split_at(dim);
        logreg_objective(x, y, w, b[0], l2_lambda, &mut grad);
        if math::sqrt(dot(&grad, &grad)) < cfg.grad_tol {
            break;
        }
        adam.step(&mut params, &grad).map_err(|_| BaselineError::BadData)?;
    }
    let bias = params[dim];
    params.truncate(dim);
    Ok(LogRegModel { weights: params, bias, l2_lambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

/// `exp(-γ‖a − b‖²)`.
pub fn rbf_kernel(a: &[f64], b: &[f64], gamma: f64) -> Result<f64, BaselineError> {
    if a.len() != b.len() {
        return Err(BaselineError::DimMismatch(a.len(), b.len()));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(math::exp(-gamma * d2))
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64, BaselineError> {
        match *self {
            Kernel::Linear if a.len() == b.len() => Ok(dot(a, b)),
            Kernel::Linear => Err(BaselineError::DimMismatch(a.len(), b.len())),
            Kernel::Rbf { gamma } => rbf_kernel(a, b, gamma),
        }
    }

    pub fn gram(&self, x: &[Vec<f64>]) -> Result<Vec<f64>, BaselineError> {
        let n = x.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = self.eval(&x[i], &x[j])?;
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    /// KKT violation tolerance.
    pub tol: f64,
    /// Iteration budget in units of the training-set size.
    pub max_passes: usize,
}

impl SvmConfig {
    pub fn new(c: f64) -> Self {
        Self { c, tol: 1e-3, max_passes: 10_000 }
    }
}

/// Solution of the soft-margin dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `Σ α_i y_i K(x_i, x) − rho`.
    pub rho: f64,
    pub iterations: usize,
}

/// Dual objective `Σα − ½ ΣΣ α_i α_j y_i y_j K_ij` (to be maximised).
pub fn dual_objective(gram: &[f64], y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[i * n + j];
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * quad
}

const TAU: f64 = 1e-12;

/// SMO with second-order working-set selection on a precomputed Gram matrix.
/// `y` holds ±1.
pub fn solve_dual(gram: &[f64], y: &[f64], c: f64, tol: f64, max_passes: usize) -> Result<DualSolution, BaselineError> {
    let n = y.len();
    if n == 0 || gram.len() != n * n {
        return Err(BaselineError::BadData);
    }
    if !(c > 0.0) || !(tol > 0.0) {
        return Err(BaselineError::BadHyper("C and tol must be positive"));
    }
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut alpha = vec![0.0; n];
    // Gradient of ½αᵀQα − eᵀα.
    let mut g = vec![-1.0; n];
    let max_iter = max_passes.saturating_mul(n.max(1));
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let mut iterations = 0;
    loop {
        // i maximises −y_t G_t over I_up.
        let (mut gmax, mut i_sel) = (f64::NEG_INFINITY, usize::MAX);
        for t in 0..n {
            let in_up = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if in_up && -y[t] * g[t] >= gmax {
                gmax = -y[t] * g[t];
                i_sel = t;
            }
        }
        // j over I_low minimises the second-order decrease.
        let (mut gmax2, mut j_sel, mut obj_min) = (f64::NEG_INFINITY, usize::MAX, f64::INFINITY);
        for t in 0..n {
            let in_low = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !in_low {
                continue;
            }
            let yg = y[t] * g[t];
            if yg >= gmax2 {
                gmax2 = yg;
            }
            if i_sel == usize::MAX {
                continue;
            }
            let grad_diff = gmax + yg;
            if grad_diff > 0.0 {
                let quad = gram[i_sel * n + i_sel] + gram[t * n + t] - 2.0 * gram[i_sel * n + t];
                let quad = if quad > 0.0 { quad } else { TAU };
                let obj = -(grad_diff * grad_diff) / quad;
                if obj <= obj_min {
                    obj_min = obj;
                    j_sel = t;
                }
            }
        }
        if gmax + gmax2 < tol || i_sel == usize::MAX || j_sel == usize::MAX {
            break;
        }
        if iterations >= max_iter {
            return Err(BaselineError::NoConvergence { tol, iterations });
        }
        iterations += 1;

        let (i, j) = (i_sel, j_sel);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            let quad = if quad > 0.0 { quad } else { TAU };
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            g[t] += q(i, t) * di + q(j, t) * dj;
        }
    }

    // Offset from free vectors, or the middle of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * g[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };
    Ok(DualSolution { alpha, rho, iterations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` of each support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub c: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64, BaselineError> {
        let mut s = self.bias;
        for (sv, coef) in self.support_vectors.iter().zip(&self.dual_coefs) {
            s += coef * self.kernel.eval(sv, x)?;
        }
        Ok(s)
    }

    /// Class 1 iff the decision value is non-negative.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, BaselineError> {
        if self.support_vectors.is_empty() {
            return Err(BaselineError::UntrainedModel);
        }
        let score = self.decision(x)?;
        let label = if score >= 0.0 { Label::Stress } else { Label::Baseline };
        Ok(Prediction { label, score })
    }
}

pub fn train_svm(x: &[Vec<f64>], y: &[Label], kernel: Kernel, cfg: &SvmConfig) -> Result<SvmModel, BaselineError> {
    check_data(x, y)?;
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0) {
            return Err(BaselineError::BadHyper("gamma must be positive"));
        }
    }
    let signs: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let gram = kernel.gram(x)?;
    let sol = solve_dual(&gram, &signs, cfg.c, cfg.tol, cfg.max_passes)?;
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            support_vectors.push(x[i].clone());
            dual_coefs.push(a * signs[i]);
        }
    }
    Ok(SvmModel { kernel, support_vectors, dual_coefs, bias: -sol.rho, c: cfg.c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&b| Label::from_u8(b).unwrap()).collect()
    }

    fn xor() -> (Vec<Vec<f64>>, Vec<Label>) {
        (
            vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
            labels(&[0, 0, 1, 1]),
        )
    }

    fn accuracy(m: &SvmModel, x: &[Vec<f64>], y: &[Label]) -> f64 {
        let ok = x.iter().zip(y).filter(|(xi, yi)| m.predict(xi).unwrap().label == **yi).count();
        ok as f64 / x.len() as f64
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_kernel(&[1.0, 2.0], &[1.0, 2.0], 3.0).unwrap(), 1.0);
        assert_relative_eq!(rbf_kernel(&[0.0, 1.0], &[0.0, 0.0], 1.0).unwrap(), 0.36787944117144233, max_relative = 1e-15);
        assert!((rbf_kernel(&[5.0, -3.0], &[-4.0, 2.0], 1e-12).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(rbf_kernel(&[1.0], &[1.0, 2.0], 1.0).unwrap_err(), BaselineError::DimMismatch(1, 2));
    }

    #[test]
    fn two_point_linear_margin() {
        let x = vec![vec![0.0], vec![2.0]];
        let m = train_svm(&x, &labels(&[0, 1]), Kernel::Linear, &SvmConfig::new(1e3)).unwrap();
        let w: f64 = m.support_vectors.iter().zip(&m.dual_coefs).map(|(sv, c)| sv[0] * c).sum();
        assert_relative_eq!(w, 1.0, max_relative = 1e-9);
        assert_relative_eq!(m.bias, -1.0, max_relative = 1e-9);
        assert_relative_eq!(2.0 / w, 2.0, max_relative = 1e-9);
        assert!(m.decision(&[1.0]).unwrap().abs() < 1e-9);
    }

    #[test]
    fn xor_needs_a_kernel() {
        let (x, y) = xor();
        let lin = train_svm(&x, &y, Kernel::Linear, &SvmConfig::new(10.0)).unwrap();
        assert!(accuracy(&lin, &x, &y) <= 0.75);
        let rbf = train_svm(&x, &y, Kernel::Rbf { gamma: 1.0 }, &SvmConfig::new(10.0)).unwrap();
        assert_eq!(accuracy(&rbf, &x, &y), 1.0);
    }

    #[test]
    fn far_support_vectors_leave_the_bias() {
        let (x, y) = xor();
        let m = train_svm(&x, &y, Kernel::Rbf { gamma: 50.0 }, &SvmConfig::new(10.0)).unwrap();
        assert_relative_eq!(m.decision(&[40.0, -40.0]).unwrap(), m.bias, max_relative = 1e-12);
    }

    #[test]
    fn duals_satisfy_constraints() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let y: Vec<Label> = (0..40).map(|i| if (i * 7) % 5 < 2 { Label::Stress } else { Label::Baseline }).collect();
        let signs: Vec<f64> = y.iter().map(|l| l.sign()).collect();
        let c = 0.7;
        let gram = Kernel::Rbf { gamma: 2.0 }.gram(&x).unwrap();
        let sol = solve_dual(&gram, &signs, c, 1e-3, 10_000).unwrap();
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let eq: f64 = sol.alpha.iter().zip(&signs).map(|(a, s)| a * s).sum();
        assert!(eq.abs() < 1e-6);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        let y = labels(&[1, 1]);
        assert_eq!(train_svm(&x, &y, Kernel::Linear, &SvmConfig::new(1.0)).unwrap_err(), BaselineError::SingleClassData);
        assert_eq!(train_logreg(&x, &y, 0.0, &LogRegConfig::default()).unwrap_err(), BaselineError::SingleClassData);
    }

    #[test]
    fn logreg_symmetric_pair() {
        let x = vec![vec![-1.0], vec![1.0]];
        let m = train_logreg(&x, &labels(&[0, 1]), 1e-4, &LogRegConfig::default()).unwrap();
        assert!(m.bias.abs() < 1e-6);
        assert!(m.weights[0] > 0.0);
        assert_eq!(m.predict(&[-1.0]).unwrap().label, Label::Baseline);
        assert_eq!(m.predict(&[1.0]).unwrap().label, Label::Stress);
    }

    #[test]
    fn logreg_shrinks_under_heavy_penalty() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 10.0 - 1.5, (i % 3) as f64]).collect();
        let y: Vec<Label> = (0..30).map(|i| if i >= 15 { Label::Stress } else { Label::Baseline }).collect();
        let m = train_logreg(&x, &y, 1e6, &LogRegConfig::default()).unwrap();
        assert!(dot(&m.weights, &m.weights).sqrt() < 1e-2);
    }

    #[test]
    fn zero_logreg_predicts_stress() {
        let m = LogRegModel { weights: vec![0.0; 3], bias: 0.0, l2_lambda: 0.0 };
        let p = m.predict(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.score, 0.5);
        assert_eq!(p.label, Label::Stress);
        let empty = LogRegModel { weights: vec![], bias: 0.0, l2_lambda: 0.0 };
        assert_eq!(empty.predict(&[]).unwrap_err(), BaselineError::UntrainedModel);
    }

    #[test]
    fn zero_column_does_not_move_the_boundary() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 * 0.53).sin() + if i % 2 == 0 { 0.8 } else { -0.8 }]).collect();
        let y: Vec<Label> = (0..20).map(|i| if i % 2 == 0 { Label::Stress } else { Label::Baseline }).collect();
        let a = train_logreg(&x, &y, 1e-3, &LogRegConfig::default()).unwrap();
        let padded: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], 0.0]).collect();
        let b = train_logreg(&padded, &y, 1e-3, &LogRegConfig::default()).unwrap();
        assert_eq!(b.weights[1], 0.0);
        assert_eq!(a.weights[0], b.weights[0]);
        assert_eq!(a.bias, b.bias);
    }
}
