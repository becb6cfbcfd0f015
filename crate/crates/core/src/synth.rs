//! Synthetic multi-subject HR/SC recordings with alternating baseline and
//! stress spans.
//!
//! Each subject gets an HR resting level drawn around 70 bpm, a tonic SC
//! level, and a profile in `[0, 1]` that decides which channel is polluted
//! by label-independent nuisance: slow HR drift (high profile) or spurious
//! skin conductance responses (low profile). Stress shifts mean HR by
//! `stress_hr_delta` and raises the SCR event rate for everyone.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::nn::TaskData;
use crate::rng::{standard_normal, substream, Domain};
use crate::signal::{Label, LabelSpan, SubjectRecording, HR_VALID_RANGE, SC_VALID_RANGE};

/// Decay time constant of a simulated SCR, seconds.
pub const SCR_DECAY_S: f64 = 4.0;
pub const MIN_SCR_AMPLITUDE_US: f64 = 0.1;
pub const HR_POPULATION_MEAN: f64 = 70.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    BadConfig(String),
    #[error("subject index {index} out of range for {n} subjects")]
    BadIndex { index: usize, n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    /// Spread of resting HR across subjects, bpm.
    pub subject_offset_std: f64,
    pub stress_hr_delta: f64,
    pub stress_scr_rate_hz: f64,
    pub baseline_scr_rate_hz: f64,
    /// White HR measurement noise, bpm.
    pub noise_std: f64,
    /// White SC measurement noise, µS.
    pub sc_noise_std: f64,
    /// Stationary std of the slow HR drift at profile 1, bpm.
    pub hr_drift_std: f64,
    pub hr_drift_tau_s: f64,
    /// Label-independent SCR rate added at profile 0.
    pub nuisance_scr_rate_hz: f64,
    /// Shortest labeled span.
    pub min_span_s: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 10,
            duration_s: 1500.0,
            sample_rate_hz: 10.0,
            seed: 0,
            subject_offset_std: 8.0,
            stress_hr_delta: 6.0,
            stress_scr_rate_hz: 0.12,
            baseline_scr_rate_hz: 0.04,
            noise_std: 2.0,
            sc_noise_std: 0.005,
            hr_drift_std: 10.0,
            hr_drift_tau_s: 60.0,
            nuisance_scr_rate_hz: 0.2,
            min_span_s: 120.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadConfig(m.into()));
        if self.n_subjects == 0 {
            return bad("n_subjects must be at least 1");
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return bad("sample_rate_hz must be positive");
        }
        if !(self.min_span_s > 0.0) || !(self.hr_drift_tau_s > 0.0) {
            return bad("min_span_s and hr_drift_tau_s must be positive");
        }
        if !(self.duration_s >= 2.0 * self.min_span_s) || !self.duration_s.is_finite() {
            return bad("duration_s must fit one baseline and one stress span");
        }
        let non_neg = [
            self.subject_offset_std,
            self.stress_hr_delta,
            self.stress_scr_rate_hz,
            self.baseline_scr_rate_hz,
            self.noise_std,
            self.sc_noise_std,
            self.hr_drift_std,
            self.nuisance_scr_rate_hz,
        ];
        if non_neg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return bad("stds, deltas and rates must be finite and non-negative");
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        math::round(self.duration_s * self.sample_rate_hz) as usize
    }
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

/// Alternating spans starting with baseline, each between `min` and `2 min`
/// long; a short remainder is folded into the last span.
fn layout_spans<R: Rng>(duration: f64, min: f64, rng: &mut R) -> Vec<LabelSpan> {
    let mut spans = Vec::new();
    let mut t = 0.0;
    let mut label = Label::Baseline;
    while t < duration {
        let len = min * (1.0 + rng.random::<f64>());
        let mut end = t + len;
        if duration - end < min {
            end = duration;
        }
        spans.push(LabelSpan { start_s: t, end_s: end, label });
        t = end;
        label = if label == Label::Baseline { Label::Stress } else { Label::Baseline };
    }
    if spans.len() == 1 {
        // Too short for a second span at this draw: split evenly.
        let mid = duration / 2.0;
        spans[0].end_s = mid;
        spans.push(LabelSpan { start_s: mid, end_s: duration, label: Label::Stress });
    }
    spans
}

/// Subject profile, stratified over `[0, 1)` with a seeded shift so both
/// nuisance types are always represented.
pub fn subject_profile(cfg: &SynthConfig, index: usize) -> f64 {
    let shift: f64 = substream(cfg.seed, Domain::Synth, u64::MAX).random();
    let u = (index as f64 + 0.5) / cfg.n_subjects as f64 + shift;
    u - math::floor(u)
}

fn poisson_events<R: Rng>(rate: f64, dt: f64, rng: &mut R) -> bool {
    rate > 0.0 && rng.random::<f64>() < rate * dt
}

pub fn generate_subject(cfg: &SynthConfig, index: usize) -> Result<(SubjectRecording, Vec<LabelSpan>), SynthError> {
    cfg.validate()?;
    if index >= cfg.n_subjects {
        return Err(SynthError::BadIndex { index, n: cfg.n_subjects });
    }
    let profile = subject_profile(cfg, index);
    let mut rng = substream(cfg.seed, Domain::Synth, index as u64);
    let hr_rest = HR_POPULATION_MEAN + cfg.subject_offset_std * standard_normal(&mut rng);
    let sc_tonic = 1.0 + 7.0 * rng.random::<f64>();
    let spans = layout_spans(cfg.duration_s, cfg.min_span_s, &mut rng);

    let n = cfg.n_samples();
    let dt = 1.0 / cfg.sample_rate_hz;
    let drift_std = cfg.hr_drift_std * profile;
    let nuisance_rate = cfg.nuisance_scr_rate_hz * (1.0 - profile);
    let keep = math::exp(-dt / cfg.hr_drift_tau_s);
    let innovation = math::sqrt(1.0 - keep * keep) * drift_std;
    let decay = math::exp(-dt / SCR_DECAY_S);

    let mut drift = drift_std * standard_normal(&mut rng);
    let mut phasic = 0.0;
    let mut hr = Vec::with_capacity(n);
    let mut sc = Vec::with_capacity(n);
    let mut span_i = 0;
    let (hr_lo, hr_hi) = HR_VALID_RANGE;
    let (sc_lo, sc_hi) = SC_VALID_RANGE;
    for i in 0..n {
        let t = i as f64 * dt;
        while span_i + 1 < spans.len() && t >= spans[span_i].end_s {
            span_i += 1;
        }
        let stress = spans[span_i].label == Label::Stress;

        let h = hr_rest + drift + if stress { cfg.stress_hr_delta } else { 0.0 } + cfg.noise_std * standard_normal(&mut rng);
        hr.push(h.clamp(hr_lo + 1.0, hr_hi - 1.0));
        drift = keep * drift + innovation * standard_normal(&mut rng);

        phasic *= decay;
        let rate = if stress { cfg.stress_scr_rate_hz } else { cfg.baseline_scr_rate_hz };
        for r in [rate, nuisance_rate] {
            if poisson_events(r, dt, &mut rng) {
                let extra: f64 = rng.random();
                phasic += MIN_SCR_AMPLITUDE_US - 0.3 * math::ln(1.0 - extra);
            }
        }
        let s = sc_tonic + phasic + cfg.sc_noise_std * standard_normal(&mut rng);
        sc.push(s.clamp(sc_lo * 2.0, sc_hi - 1.0));
    }
    let rec = SubjectRecording::new(subject_id(index), cfg.sample_rate_hz, 0.0, hr, sc)
        .map_err(|e| SynthError::BadConfig(format!("{e}")))?;
    Ok((rec, spans))
}

pub fn generate_all(cfg: &SynthConfig) -> Result<Vec<(SubjectRecording, Vec<LabelSpan>)>, SynthError> {
    (0..cfg.n_subjects).map(|i| generate_subject(cfg, i)).collect()
}

/// Linearly separable tasks: standard normal inputs labeled by the sign of
/// a per-task random projection, keeping only points at least `margin` from
/// the boundary.
pub fn separable_tasks(n_tasks: usize, per_task: usize, dim: usize, margin: f64, seed: u64) -> Vec<TaskData> {
    (0..n_tasks)
        .map(|t| {
            let mut rng = substream(seed, Domain::Synth, (1 << 40) + t as u64);
            let mut w: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
            let norm = math::sqrt(w.iter().map(|v| v * v).sum());
            w.iter_mut().for_each(|v| *v /= norm);
            let mut inputs = Vec::with_capacity(per_task);
            let mut targets = Vec::with_capacity(per_task);
            while inputs.len() < per_task {
                let x: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
                let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                if s.abs() < margin {
                    continue;
                }
                targets.push(if s > 0.0 { Label::Stress } else { Label::Baseline });
                inputs.push(x);
            }
            TaskData { task_id: subject_id(t), inputs, targets }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{labels_from_spans, remove_artifacts, validate_spans};

    fn quiet() -> SynthConfig {
        SynthConfig { noise_std: 0.0, hr_drift_std: 0.0, stress_hr_delta: 10.0, ..SynthConfig::default() }
    }

    #[test]
    fn stress_shift_without_noise() {
        let cfg = quiet();
        for i in 0..cfg.n_subjects {
            let (rec, spans) = generate_subject(&cfg, i).unwrap();
            let labels = labels_from_spans(&rec, &spans);
            let mean_of = |l: Label| {
                let v: Vec<f64> = rec.hr.iter().zip(&labels).filter(|(_, x)| **x == Some(l)).map(|(h, _)| *h).collect();
                math::mean(&v)
            };
            let diff = mean_of(Label::Stress) - mean_of(Label::Baseline);
            assert!((diff - 10.0).abs() <= 0.1, "{diff}");
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let cfg = SynthConfig { duration_s: 600.0, ..SynthConfig::default() };
        let a = generate_subject(&cfg, 3).unwrap();
        assert_eq!(a, generate_subject(&cfg, 3).unwrap());
        assert_eq!(a.0.len(), 6000);
        assert_ne!(a.0.hr, generate_subject(&cfg, 4).unwrap().0.hr);
    }

    #[test]
    fn spans_alternate_and_cover() {
        let cfg = SynthConfig::default();
        for i in 0..cfg.n_subjects {
            let (_, spans) = generate_subject(&cfg, i).unwrap();
            validate_spans(&spans).unwrap();
            assert_eq!(spans[0].start_s, 0.0);
            assert_eq!(spans.last().unwrap().end_s, cfg.duration_s);
            for w in spans.windows(2) {
                assert_eq!(w[0].end_s, w[1].start_s);
                assert_ne!(w[0].label, w[1].label);
            }
            assert!(spans.iter().all(|s| s.end_s - s.start_s >= cfg.min_span_s));
        }
    }

    #[test]
    fn already_artifact_free() {
        let cfg = SynthConfig { subject_offset_std: 40.0, ..SynthConfig::default() };
        for i in 0..cfg.n_subjects {
            let (rec, _) = generate_subject(&cfg, i).unwrap();
            assert_eq!(remove_artifacts(&rec).unwrap(), rec);
        }
    }

    #[test]
    fn zero_offset_shares_resting_hr() {
        let cfg = SynthConfig { subject_offset_std: 0.0, ..quiet() };
        for i in 0..cfg.n_subjects {
            let (rec, spans) = generate_subject(&cfg, i).unwrap();
            let labels = labels_from_spans(&rec, &spans);
            let h: Vec<f64> = rec.hr.iter().zip(&labels).filter(|(_, l)| **l == Some(Label::Baseline)).map(|(h, _)| *h).collect();
            assert!((math::mean(&h) - HR_POPULATION_MEAN).abs() < 1e-9);
        }
    }

    #[test]
    fn profiles_cover_both_ends() {
        let cfg = SynthConfig::default();
        let p: Vec<f64> = (0..cfg.n_subjects).map(|i| subject_profile(&cfg, i)).collect();
        assert!(p.iter().any(|&v| v < 0.25) && p.iter().any(|&v| v > 0.75));
    }

    #[test]
    fn bad_configs() {
        assert!(SynthConfig { n_subjects: 0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { duration_s: 100.0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { noise_std: -1.0, ..SynthConfig::default() }.validate().is_err());
        assert!(matches!(generate_subject(&SynthConfig::default(), 10), Err(SynthError::BadIndex { .. })));
    }

    #[test]
    fn separable_margin_holds() {
        let tasks = separable_tasks(2, 50, 16, 0.3, 9);
        assert_eq!(tasks.len(), 2);
        assert!(tasks.iter().all(|t| t.inputs.len() == 50));
        assert!(tasks[0].targets.contains(&Label::Stress) && tasks[0].targets.contains(&Label::Baseline));
    }
}
