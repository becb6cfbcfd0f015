//! Sliding windows and the 16-dimensional physiological feature vector.
//!
//! Feature order (fixed, also the column order of feature files):
//!
//! | idx | name | idx | name |
//! |-----|------|-----|------|
//! | 0 | hr_mean | 8 | sc_std |
//! | 1 | hr_std | 9 | sc_min |
//! | 2 | hr_min | 10 | sc_max |
//! | 3 | hr_max | 11 | sc_range |
//! | 4 | hr_range | 12 | sc_num_peaks |
//! | 5 | hr_rmssd | 13 | sc_amplitude |
//! | 6 | hr_sdsd | 14 | sc_skewness |
//! | 7 | sc_mean | 15 | sc_kurtosis |
//!
//! Standard deviations are population (ddof = 0) throughout, kurtosis is
//! excess kurtosis.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::signal::{labels_from_spans, Label, LabelSpan, SubjectRecording};

pub const N_FEATURES: usize = 16;
pub const N_HR_FEATURES: usize = 7;
pub const N_SC_FEATURES: usize = 9;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "hr_mean",
    "hr_std",
    "hr_min",
    "hr_max",
    "hr_range",
    "hr_rmssd",
    "hr_sdsd",
    "sc_mean",
    "sc_std",
    "sc_min",
    "sc_max",
    "sc_range",
    "sc_num_peaks",
    "sc_amplitude",
    "sc_skewness",
    "sc_kurtosis",
];

/// Minimum trough-to-peak rise of a skin conductance response, in µS.
pub const SCR_MIN_RISE_US: f64 = 0.05;

/// Below this second central moment a window counts as constant.
const ZERO_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("window length {len_s} s / step {step_s} s are invalid")]
    BadWindowParams { len_s: f64, step_s: f64 },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("subject {0} has no baseline windows")]
    NoBaselineWindows(String),
    #[error("dataset is already baseline-normalized")]
    AlreadyNormalized,
    #[error("subject {0} has no windows")]
    EmptySubject(String),
    #[error("subject {0} appears twice")]
    DuplicateSubject(String),
    #[error("feature vector of subject {0} contains a non-finite value")]
    NonFinite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub len_s: f64,
    pub step_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { len_s: 30.0, step_s: 15.0 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let ok = self.len_s.is_finite() && self.len_s > 0.0 && self.step_s > 0.0 && self.step_s <= self.len_s;
        if ok {
            Ok(())
        } else {
            Err(FeatureError::BadWindowParams { len_s: self.len_s, step_s: self.step_s })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowLabel {
    Labeled(Label),
    /// Exactly as many baseline as stress samples.
    Tie,
    /// Fewer than half of the samples carry a label.
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_s: f64,
    pub range: Range<usize>,
    pub label: WindowLabel,
}

/// Majority label over the labeled samples of a window.
pub fn window_label(labels: &[Option<Label>]) -> WindowLabel {
    let (mut zeros, mut ones) = (0usize, 0usize);
    for l in labels {
        match l {
            Some(Label::Baseline) => zeros += 1,
            Some(Label::Stress) => ones += 1,
            None => {}
        }
    }
    if 2 * (zeros + ones) < labels.len() || zeros + ones == 0 {
        WindowLabel::Unlabeled
    } else if zeros == ones {
        WindowLabel::Tie
    } else if ones > zeros {
        WindowLabel::Labeled(Label::Stress)
    } else {
        WindowLabel::Labeled(Label::Baseline)
    }
}

fn sample_index(offset_s: f64, sample_rate_hz: f64) -> usize {
    math::ceil(offset_s * sample_rate_hz - 1e-9).max(0.0) as usize
}

/// Windows starting at `t0, t0 + step, ...` that fit entirely inside the
/// recording. Window `k` covers the samples whose time lies in
/// `[t0 + k·step, t0 + k·step + len)`.
pub fn slide_windows(
    rec: &SubjectRecording,
    spans: &[LabelSpan],
    spec: WindowSpec,
) -> Result<Vec<Window>, FeatureError> {
    spec.validate()?;
    let labels = labels_from_spans(rec, spans);
    let duration = rec.duration_s();
    let fs = rec.sample_rate_hz;
    let mut out = Vec::new();
    for k in 0usize.. {
        let offset = k as f64 * spec.step_s;
        if offset + spec.len_s > duration + 1e-9 {
            break;
        }
        let lo = sample_index(offset, fs).min(rec.len());
        let hi = sample_index(offset + spec.len_s, fs).min(rec.len());
        out.push(Window { start_s: rec.t0 + offset, range: lo..hi, label: window_label(&labels[lo..hi]) });
    }
    Ok(out)
}

/// `[mean, std, min, max, range, rmssd, sdsd]` of a heart-rate window.
pub fn hr_features(hr: &[f64]) -> Result<[f64; N_HR_FEATURES], FeatureError> {
    if hr.len() < 2 {
        return Err(FeatureError::InsufficientSamples { needed: 2, got: hr.len() });
    }
    let (min, max) = min_max(hr);
    let diffs: Vec<f64> = hr.windows(2).map(|w| w[1] - w[0]).collect();
    let rmssd = math::sqrt(diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64);
    Ok([math::mean(hr), math::pop_std(hr), min, max, max - min, rmssd, math::pop_std(&diffs)])
}

/// Count and mean amplitude of skin conductance responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScrPeaks {
    pub count: usize,
    pub mean_amplitude: f64,
}

/// Detects responses as local maxima rising at least `min_rise` above the
/// lowest value since the previous local maximum (or the window start).
pub fn count_sc_peaks(sc: &[f64], min_rise: f64) -> ScrPeaks {
    let mut count = 0usize;
    let mut total = 0.0;
    if sc.len() >= 3 {
        let mut trough = sc[0];
        for i in 1..sc.len() - 1 {
            if sc[i] > sc[i - 1] && sc[i] >= sc[i + 1] {
                let rise = sc[i] - trough;
                if rise >= min_rise {
                    count += 1;
                    total += rise;
                }
                trough = sc[i];
            } else if sc[i] < trough {
                trough = sc[i];
            }
        }
    }
    let mean_amplitude = if count == 0 { 0.0 } else { total / count as f64 };
    ScrPeaks { count, mean_amplitude }
}

/// `(skewness, excess kurtosis)` from central sample moments; both 0 on a
/// constant window.
pub fn shape_moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = math::mean(x);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 < ZERO_VARIANCE {
        return (0.0, 0.0);
    }
    (m3 / (m2 * math::sqrt(m2)), m4 / (m2 * m2) - 3.0)
}

/// `[mean, std, min, max, range, num_peaks, amplitude, skewness, kurtosis]`
/// of a skin conductance window.
pub fn sc_features(sc: &[f64]) -> Result<[f64; N_SC_FEATURES], FeatureError> {
    sc_features_with(sc, SCR_MIN_RISE_US)
}

pub fn sc_features_with(sc: &[f64], min_rise: f64) -> Result<[f64; N_SC_FEATURES], FeatureError> {
    if sc.len() < 4 {
        return Err(FeatureError::InsufficientSamples { needed: 4, got: sc.len() });
    }
    let (min, max) = min_max(sc);
    let peaks = count_sc_peaks(sc, min_rise);
    let (skew, kurt) = shape_moments(sc);
    Ok([
        math::mean(sc),
        math::pop_std(sc),
        min,
        max,
        max - min,
        peaks.count as f64,
        peaks.mean_amplitude,
        skew,
        kurt,
    ])
}

fn min_max(x: &[f64]) -> (f64, f64) {
    x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// The full 16-value vector for one pair of aligned windows.
pub fn window_features(hr: &[f64], sc: &[f64]) -> Result<[f64; N_FEATURES], FeatureError> {
    let h = hr_features(hr)?;
    let s = sc_features(sc)?;
    let mut out = [0.0; N_FEATURES];
    out[..N_HR_FEATURES].copy_from_slice(&h);
    out[N_HR_FEATURES..].copy_from_slice(&s);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub subject_id: String,
    pub window_start_s: f64,
    pub label: Label,
    pub values: [f64; N_FEATURES],
}

/// Window bookkeeping for one recording.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WindowTally {
    pub total: usize,
    pub kept: usize,
    pub ties: usize,
    pub unlabeled: usize,
}

/// Windows, labels and features for one preprocessed recording. Tied and
/// unlabeled windows are dropped and counted.
pub fn featurize_recording(
    rec: &SubjectRecording,
    spans: &[LabelSpan],
    spec: WindowSpec,
) -> Result<(Vec<FeatureVector>, WindowTally), FeatureError> {
    let windows = slide_windows(rec, spans, spec)?;
    let mut tally = WindowTally { total: windows.len(), ..WindowTally::default() };
    let mut out = Vec::new();
    for w in windows {
        let label = match w.label {
            WindowLabel::Labeled(l) => l,
            WindowLabel::Tie => {
                tally.ties += 1;
                continue;
            }
            WindowLabel::Unlabeled => {
                tally.unlabeled += 1;
                continue;
            }
        };
        let values = window_features(&rec.hr[w.range.clone()], &rec.sc[w.range])?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(rec.subject_id.clone()));
        }
        out.push(FeatureVector { subject_id: rec.subject_id.clone(), window_start_s: w.start_s, label, values });
        tally.kept += 1;
    }
    Ok((out, tally))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectWindows {
    pub subject_id: String,
    pub windows: Vec<FeatureVector>,
}

impl SubjectWindows {
    pub fn count(&self, label: Label) -> usize {
        self.windows.iter().filter(|w| w.label == label).count()
    }
}

/// Per-subject feature vectors, in a fixed subject order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub subjects: Vec<SubjectWindows>,
    pub spec: WindowSpec,
    pub normalized: bool,
}

impl WindowedDataset {
    pub fn new(subjects: Vec<SubjectWindows>, spec: WindowSpec, normalized: bool) -> Result<Self, FeatureError> {
        spec.validate()?;
        for (i, s) in subjects.iter().enumerate() {
            if s.windows.is_empty() {
                return Err(FeatureError::EmptySubject(s.subject_id.clone()));
            }
            if subjects[..i].iter().any(|o| o.subject_id == s.subject_id) {
                return Err(FeatureError::DuplicateSubject(s.subject_id.clone()));
            }
        }
        Ok(Self { subjects, spec, normalized })
    }

    /// Groups vectors by subject, keeping first-appearance order of subjects
    /// and the given order of windows.
    pub fn from_vectors(vectors: Vec<FeatureVector>, spec: WindowSpec, normalized: bool) -> Result<Self, FeatureError> {
        let mut subjects: Vec<SubjectWindows> = Vec::new();
        for v in vectors {
            match subjects.iter_mut().find(|s| s.subject_id == v.subject_id) {
                Some(s) => s.windows.push(v),
                None => subjects.push(SubjectWindows { subject_id: v.subject_id.clone(), windows: alloc::vec![v] }),
            }
        }
        Self::new(subjects, spec, normalized)
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectWindows> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn subject_ids(&self) -> impl Iterator<Item = &str> {
        self.subjects.iter().map(|s| s.subject_id.as_str())
    }

    pub fn vectors(&self) -> impl Iterator<Item = &FeatureVector> {
        self.subjects.iter().flat_map(|s| s.windows.iter())
    }

    pub fn len(&self) -> usize {
        self.subjects.iter().map(|s| s.windows.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-subject mean feature vector over baseline windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BaselineStats(pub BTreeMap<String, [f64; N_FEATURES]>);

/// Subtracts each subject's baseline mean from every one of its windows.
pub fn baseline_normalize(ds: &WindowedDataset) -> Result<(WindowedDataset, BaselineStats), FeatureError> {
    if ds.normalized {
        return Err(FeatureError::AlreadyNormalized);
    }
    let mut stats = BaselineStats::default();
    let mut subjects = Vec::with_capacity(ds.subjects.len());
    for s in &ds.subjects {
        let mut sum = [0.0; N_FEATURES];
        let mut n = 0usize;
        for w in s.windows.iter().filter(|w| w.label == Label::Baseline) {
            for (acc, v) in sum.iter_mut().zip(w.values.iter()) {
                *acc += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(FeatureError::NoBaselineWindows(s.subject_id.clone()));
        }
        let means = sum.map(|v| v / n as f64);
        let windows = s
            .windows
            .iter()
            .map(|w| {
                let mut w = w.clone();
                for (v, m) in w.values.iter_mut().zip(means.iter()) {
                    *v -= m;
                }
                w
            })
            .collect();
        stats.0.insert(s.subject_id.clone(), means);
        subjects.push(SubjectWindows { subject_id: s.subject_id.clone(), windows });
    }
    Ok((WindowedDataset { subjects, spec: ds.spec, normalized: true }, stats))
}
