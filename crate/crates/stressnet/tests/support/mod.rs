//! Reference implementations written from the textbook definitions, used as
//! oracles by the acceptance suite and the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use stressnet_core::nn::MtlNetwork;
use stressnet_core::rng::{standard_normal, ChaCha8Rng};
use stressnet_core::signal::Label;

// ---------------------------------------------------------------- features

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn central_moment(x: &[f64], k: i32) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(k)).sum::<f64>() / x.len() as f64
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// The 16 window features from their definitions.
pub fn oracle_features(hr: &[f64], sc: &[f64]) -> [f64; 16] {
    let hs = sorted(hr);
    let diffs: Vec<f64> = (1..hr.len()).map(|i| hr[i] - hr[i - 1]).collect();
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let sdsd = central_moment(&diffs, 2).sqrt();

    let ss = sorted(sc);
    let (count, amp) = oracle_scr(sc, 0.05);
    let m2 = central_moment(sc, 2);
    let (skew, kurt) = if m2 < 1e-12 {
        (0.0, 0.0)
    } else {
        (central_moment(sc, 3) / m2.powf(1.5), central_moment(sc, 4) / m2.powi(2) - 3.0)
    };
    [
        mean(hr),
        central_moment(hr, 2).sqrt(),
        hs[0],
        hs[hs.len() - 1],
        hs[hs.len() - 1] - hs[0],
        rmssd,
        sdsd,
        mean(sc),
        m2.sqrt(),
        ss[0],
        ss[ss.len() - 1],
        ss[ss.len() - 1] - ss[0],
        count as f64,
        amp,
        skew,
        kurt,
    ]
}

/// A response is a sample above its left neighbour and not below its right
/// one whose rise over the minimum since the previous such sample (or the
/// window start) reaches `min_rise`.
pub fn oracle_scr(sc: &[f64], min_rise: f64) -> (usize, f64) {
    let maxima: Vec<usize> = (1..sc.len().saturating_sub(1)).filter(|&i| sc[i] > sc[i - 1] && sc[i] >= sc[i + 1]).collect();
    let mut rises = Vec::new();
    let mut from = 0;
    for &i in &maxima {
        let trough = sc[from..i].iter().copied().fold(f64::INFINITY, f64::min);
        if sc[i] - trough >= min_rise {
            rises.push(sc[i] - trough);
        }
        from = i;
    }
    let amp = if rises.is_empty() { 0.0 } else { rises.iter().sum::<f64>() / rises.len() as f64 };
    (rises.len(), amp)
}

/// A plausible 300-sample HR/SC window pair.
pub fn random_window(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut hr = Vec::with_capacity(n);
    let mut level = 60.0 + 40.0 * rng.random::<f64>();
    let jitter = 0.2 + 3.0 * rng.random::<f64>();
    for _ in 0..n {
        level += 0.3 * standard_normal(rng);
        hr.push(level + jitter * standard_normal(rng));
    }
    let mut sc = Vec::with_capacity(n);
    let tonic = 0.5 + 10.0 * rng.random::<f64>();
    let rate = 0.05 * rng.random::<f64>();
    let noise = 0.02 * rng.random::<f64>();
    let mut phasic = 0.0;
    for _ in 0..n {
        phasic *= 0.975;
        if rng.random::<f64>() < rate {
            phasic += 0.02 + 0.5 * rng.random::<f64>();
        }
        sc.push(tonic + phasic + noise * standard_normal(rng));
    }
    (hr, sc)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

// ----------------------------------------------------------------- metrics

/// Exact non-negative fraction.
#[derive(Debug, Clone, Copy)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Self {
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Frac { num: s * num / g, den: s * den / g }
    }
    pub fn sub(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den - o.num * self.den, self.den * o.den)
    }
    pub fn div(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den, self.den * o.num)
    }
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// F1 of the stress class straight from prediction pairs.
pub fn oracle_f1(truth: &[Label], pred: &[Label]) -> f64 {
    let pos = |l: &Label| *l == Label::Stress;
    let tp = truth.iter().zip(pred).filter(|(t, p)| pos(t) && pos(p)).count() as i128;
    let pred_pos = pred.iter().filter(|p| pos(p)).count() as i128;
    let true_pos = truth.iter().filter(|t| pos(t)).count() as i128;
    if pred_pos + true_pos == 0 {
        return 0.0;
    }
    // Harmonic mean of precision and recall, 2PR/(P+R), as exact fractions.
    Frac::new(2 * tp, pred_pos + true_pos).to_f64()
}

/// Cohen's kappa from observed and chance agreement, as exact fractions.
pub fn oracle_kappa(truth: &[Label], pred: &[Label]) -> f64 {
    let n = truth.len() as i128;
    let agree = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as i128;
    let p_o = Frac::new(agree, n);
    let mut chance = 0i128;
    for class in [Label::Baseline, Label::Stress] {
        let a = truth.iter().filter(|t| **t == class).count() as i128;
        let b = pred.iter().filter(|p| **p == class).count() as i128;
        chance += a * b;
    }
    let p_e = Frac::new(chance, n * n);
    let one = Frac::new(1, 1);
    if p_e.num == p_e.den {
        return 0.0;
    }
    p_o.sub(p_e).div(one.sub(p_e)).to_f64()
}

// -------------------------------------------------------------- network

fn elu(x: f64) -> f64 {
    if x < 0.0 {
        x.exp() - 1.0
    } else {
        x
    }
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter().enumerate().map(|(o, bo)| bo + x.iter().enumerate().map(|(i, xi)| w[o * x.len() + i] * xi).sum::<f64>()).collect()
}

/// BCE plus the L2 term on one task's weights, computed by a plain forward
/// pass over the raw layer arrays.
pub fn oracle_loss(net: &MtlNetwork, x: &[f64], y: f64, task: &str, lambda: f64) -> f64 {
    let h1: Vec<f64> = dense(&net.shared.weights, &net.shared.biases, x).into_iter().map(elu).collect();
    let br = &net.tasks[task];
    let h2: Vec<f64> = dense(&br.hidden.weights, &br.hidden.biases, &h1).into_iter().map(elu).collect();
    let z = dense(&br.head.weights, &br.head.biases, &h2)[0];
    let p = (1.0 / (1.0 + (-z).exp())).clamp(1e-7, 1.0 - 1e-7);
    let bce = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
    let sq = |v: &[f64]| v.iter().map(|w| w * w).sum::<f64>();
    bce + lambda * (sq(&br.hidden.weights) + sq(&br.head.weights))
}

// ------------------------------------------------------------------ SVM

pub fn dual_value(q: &DMatrix<f64>, alpha: &DVector<f64>) -> f64 {
    alpha.sum() - 0.5 * (alpha.transpose() * q * alpha)[(0, 0)]
}

/// Maximum of the soft-margin dual by enumerating, for every point, whether
/// its multiplier sits at 0, at C or strictly between; each face's
/// equality-constrained stationary point is solved with an SVD.
pub fn brute_force_dual(gram: &[f64], y: &[f64], c: f64) -> (f64, Vec<f64>) {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * gram[i * n + j]);
    let mut best = (f64::NEG_INFINITY, vec![0.0; n]);
    let combos = 3usize.pow(n as u32);
    for code in 0..combos {
        let mut state = Vec::with_capacity(n);
        let mut k = code;
        for _ in 0..n {
            state.push(k % 3);
            k /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha = DVector::from_fn(n, |i, _| if state[i] == 1 { c } else { 0.0 });
        if !free.is_empty() {
            let m = free.len();
            let mut a = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[(r, s)] = q[(i, j)];
                }
                a[(r, m)] = y[i];
                a[(m, r)] = y[i];
                let fixed: f64 = (0..n).filter(|j| state[*j] != 2).map(|j| q[(i, j)] * alpha[j]).sum();
                rhs[r] = 1.0 - fixed;
            }
            rhs[m] = -(0..n).filter(|j| state[*j] != 2).map(|j| y[j] * alpha[j]).sum::<f64>();
            let Ok(sol) = a.clone().svd(true, true).solve(&rhs, 1e-12) else { continue };
            if (&a * &sol - &rhs).norm() > 1e-8 {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                alpha[i] = sol[r];
            }
        }
        let feasible = alpha.iter().all(|&a| (-1e-9..=c + 1e-9).contains(&a))
            && (0..n).map(|i| y[i] * alpha[i]).sum::<f64>().abs() < 1e-9;
        if feasible {
            let v = dual_value(&q, &alpha);
            if v > best.0 {
                best = (v, alpha.iter().copied().collect());
            }
        }
    }
    best
}
