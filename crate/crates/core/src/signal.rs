//! Recording model and preprocessing: upsampling, marker events, trimming of
//! ambiguous spans, label derivation and artifact repair.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Plausible heart rate range in beats per minute.
pub const HR_VALID_RANGE: (f64, f64) = (30.0, 220.0);
/// Plausible skin conductance range in microsiemens.
pub const SC_VALID_RANGE: (f64, f64) = (0.01, 100.0);
/// Threshold for marker events, in standard deviations above the mean.
pub const MARKER_Z_THRESHOLD: f64 = 3.0;
/// Minimum spacing between two marker events.
pub const MARKER_MIN_DISTANCE_S: f64 = 30.0;
/// Data removed where rest meets driving.
pub const AMBIGUITY_BUFFER_S: f64 = 240.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Baseline = 0,
    Stress = 1,
}

impl Label {
    pub fn as_f64(self) -> f64 {
        match self {
            Label::Baseline => 0.0,
            Label::Stress => 1.0,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Baseline),
            1 => Some(Label::Stress),
            _ => None,
        }
    }

    /// +1 for stress, -1 for baseline.
    pub fn sign(self) -> f64 {
        match self {
            Label::Baseline => -1.0,
            Label::Stress => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    HeartRate,
    SkinConductance,
    Marker,
    Labels,
}

impl core::fmt::Display for Channel {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Channel::HeartRate => "hr",
            Channel::SkinConductance => "sc",
            Channel::Marker => "marker",
            Channel::Labels => "label",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("bad resampling rates: from {from_hz} Hz to {to_hz} Hz")]
    BadRate { from_hz: f64, to_hz: f64 },
    #[error("channel {0} is empty")]
    EmptyChannel(Channel),
    #[error("channel {channel} has {got} samples, expected {expected}")]
    LengthMismatch { channel: Channel, expected: usize, got: usize },
    #[error("channel {channel} has a non-finite value at sample {index}")]
    NonFinite { channel: Channel, index: usize },
    #[error("need at least 2 marker peaks, found {0}")]
    TooFewMarkers(usize),
    #[error("marker peaks must be strictly increasing and inside the recording")]
    BadPeaks,
    #[error("trial template has {template} entries but the markers delimit {segments} segments")]
    TemplateTooShort { segments: usize, template: usize },
    #[error("every sample of channel {0} is outside the valid range")]
    AllSamplesInvalid(Channel),
    #[error("label span [{start_s}, {end_s}) is empty or reversed")]
    BadSpan { start_s: f64, end_s: f64 },
    #[error("label spans overlap")]
    OverlappingSpans,
}

/// One subject's synchronised physiological channels.
///
/// Sample `i` sits at time `t0 + i / sample_rate_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecording {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    pub t0: f64,
    pub hr: Vec<f64>,
    pub sc: Vec<f64>,
    pub marker: Option<Vec<f64>>,
    pub labels: Option<Vec<Option<Label>>>,
}

impl SubjectRecording {
    /// Builds a recording after checking rate and channel lengths. Channel
    /// values may still contain artifacts; finiteness is enforced by the
    /// loader and by [`remove_artifacts`].
    pub fn new(
        subject_id: impl Into<String>,
        sample_rate_hz: f64,
        t0: f64,
        hr: Vec<f64>,
        sc: Vec<f64>,
    ) -> Result<Self, SignalError> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(SignalError::BadRate { from_hz: sample_rate_hz, to_hz: sample_rate_hz });
        }
        if hr.is_empty() {
            return Err(SignalError::EmptyChannel(Channel::HeartRate));
        }
        if sc.len() != hr.len() {
            return Err(SignalError::LengthMismatch {
                channel: Channel::SkinConductance,
                expected: hr.len(),
                got: sc.len(),
            });
        }
        Ok(Self { subject_id: subject_id.into(), sample_rate_hz, t0, hr, sc, marker: None, labels: None })
    }

    pub fn with_marker(mut self, marker: Vec<f64>) -> Result<Self, SignalError> {
        if marker.len() != self.len() {
            return Err(SignalError::LengthMismatch {
                channel: Channel::Marker,
                expected: self.len(),
                got: marker.len(),
            });
        }
        self.marker = Some(marker);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<Option<Label>>) -> Result<Self, SignalError> {
        if labels.len() != self.len() {
            return Err(SignalError::LengthMismatch {
                channel: Channel::Labels,
                expected: self.len(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.sample_rate_hz
    }

    /// Copies samples `[start, end)` into a new recording with shifted `t0`.
    pub fn slice(&self, start: usize, end: usize) -> SubjectRecording {
        SubjectRecording {
            subject_id: self.subject_id.clone(),
            sample_rate_hz: self.sample_rate_hz,
            t0: self.time_of(start),
            hr: self.hr[start..end].to_vec(),
            sc: self.sc[start..end].to_vec(),
            marker: self.marker.as_ref().map(|m| m[start..end].to_vec()),
            labels: self.labels.as_ref().map(|l| l[start..end].to_vec()),
        }
    }
}

/// Half-open time interval `[start_s, end_s)` carrying one label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start_s: f64,
    pub end_s: f64,
    pub label: Label,
}

impl LabelSpan {
    pub fn new(start_s: f64, end_s: f64, label: Label) -> Result<Self, SignalError> {
        if !(start_s < end_s) {
            return Err(SignalError::BadSpan { start_s, end_s });
        }
        Ok(Self { start_s, end_s, label })
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

/// Checks every span is well formed and that no two overlap.
pub fn validate_spans(spans: &[LabelSpan]) -> Result<(), SignalError> {
    let mut sorted: Vec<&LabelSpan> = spans.iter().collect();
    for s in &sorted {
        if !(s.start_s < s.end_s) {
            return Err(SignalError::BadSpan { start_s: s.start_s, end_s: s.end_s });
        }
    }
    sorted.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    if sorted.windows(2).any(|w| w[1].start_s < w[0].end_s) {
        return Err(SignalError::OverlappingSpans);
    }
    Ok(())
}

/// Per-sample labels implied by `spans`; samples outside every span are `None`.
pub fn labels_from_spans(rec: &SubjectRecording, spans: &[LabelSpan]) -> Vec<Option<Label>> {
    (0..rec.len())
        .map(|i| {
            let t = rec.time_of(i);
            spans.iter().find(|s| s.contains(t)).map(|s| s.label)
        })
        .collect()
}

/// Collapses per-sample labels into maximal runs.
pub fn spans_from_labels(rec: &SubjectRecording, labels: &[Option<Label>]) -> Vec<LabelSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let Some(label) = labels[i] else {
            i += 1;
            continue;
        };
        let start = i;
        while i < labels.len() && labels[i] == Some(label) {
            i += 1;
        }
        spans.push(LabelSpan { start_s: rec.time_of(start), end_s: rec.time_of(i), label });
    }
    spans
}

/// Linear-interpolation upsampling. Past the last original sample the final
/// value is held.
pub fn upsample_channel(x: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>, SignalError> {
    if !(from_hz > 0.0) || !(to_hz > 0.0) || from_hz > to_hz {
        return Err(SignalError::BadRate { from_hz, to_hz });
    }
    if x.is_empty() {
        return Err(SignalError::EmptyChannel(Channel::HeartRate));
    }
    if from_hz == to_hz {
        return Ok(x.to_vec());
    }
    let n_out = math::round(x.len() as f64 * to_hz / from_hz) as usize;
    let last = x.len() - 1;
    Ok((0..n_out)
        .map(|j| {
            let pos = j as f64 * from_hz / to_hz;
            let i = math::floor(pos) as usize;
            if i >= last {
                x[last]
            } else {
                let frac = pos - i as f64;
                x[i] + frac * (x[i + 1] - x[i])
            }
        })
        .collect())
}

/// Indices of button-press events in a marker channel.
///
/// A sample qualifies when it is a local maximum above mean + 3σ of the whole
/// channel. Scanning left to right, a candidate closer than 30 s to the last
/// accepted event is skipped.
pub fn detect_marker_peaks(marker: &[f64], sample_rate_hz: f64) -> Vec<usize> {
    let n = marker.len();
    if n == 0 {
        return Vec::new();
    }
    let threshold = math::mean(marker) + MARKER_Z_THRESHOLD * math::pop_std(marker);
    let min_gap = MARKER_MIN_DISTANCE_S * sample_rate_hz;
    let mut peaks: Vec<usize> = Vec::new();
    for i in 0..n {
        let v = marker[i];
        if !(v > threshold) {
            continue;
        }
        let rises = i == 0 || v > marker[i - 1];
        let falls = i + 1 == n || v >= marker[i + 1];
        if !(rises && falls) {
            continue;
        }
        if let Some(&last) = peaks.last() {
            if ((i - last) as f64) < min_gap {
                continue;
            }
        }
        peaks.push(i);
    }
    peaks
}

/// Protocol phase of the segment between two consecutive markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialKind {
    #[serde(alias = "baseline")]
    Rest,
    #[serde(alias = "city", alias = "highway", alias = "stress")]
    Drive,
}

impl TrialKind {
    pub fn label(self) -> Label {
        match self {
            TrialKind::Rest => Label::Baseline,
            TrialKind::Drive => Label::Stress,
        }
    }
}

/// Drops data outside the first and last marker and labels the segments in
/// between from `template` (one entry per segment, extra entries ignored).
///
/// Where a rest segment is followed by driving its last 240 s are removed;
/// where it follows driving its first 240 s are removed. Removed samples stay
/// in the returned recording but carry no label.
pub fn trim_and_label(
    rec: &SubjectRecording,
    peaks: &[usize],
    template: &[TrialKind],
) -> Result<(SubjectRecording, Vec<LabelSpan>), SignalError> {
    if peaks.len() < 2 {
        return Err(SignalError::TooFewMarkers(peaks.len()));
    }
    if peaks.windows(2).any(|w| w[0] >= w[1]) || peaks[peaks.len() - 1] >= rec.len() {
        return Err(SignalError::BadPeaks);
    }
    let segments = peaks.len() - 1;
    if template.len() < segments {
        return Err(SignalError::TemplateTooShort { segments, template: template.len() });
    }
    let buffer = math::round(AMBIGUITY_BUFFER_S * rec.sample_rate_hz) as usize;

    let mut spans = Vec::new();
    for seg in 0..segments {
        let kind = template[seg];
        let (mut start, mut end) = (peaks[seg], peaks[seg + 1]);
        if kind == TrialKind::Rest {
            if seg + 1 < segments && template[seg + 1] == TrialKind::Drive {
                end = end.saturating_sub(buffer);
            }
            if seg > 0 && template[seg - 1] == TrialKind::Drive {
                start += buffer;
            }
        }
        if start < end {
            spans.push(LabelSpan { start_s: rec.time_of(start), end_s: rec.time_of(end), label: kind.label() });
        }
    }

    let mut trimmed = rec.slice(peaks[0], peaks[segments]);
    let labels = labels_from_spans(&trimmed, &spans);
    trimmed.labels = Some(labels);
    Ok((trimmed, spans))
}

fn repair_channel(x: &[f64], (lo, hi): (f64, f64), channel: Channel) -> Result<Vec<f64>, SignalError> {
    let valid = |v: f64| v.is_finite() && v >= lo && v <= hi;
    let good: Vec<usize> = (0..x.len()).filter(|&i| valid(x[i])).collect();
    let (Some(&first), Some(&last)) = (good.first(), good.last()) else {
        return Err(SignalError::AllSamplesInvalid(channel));
    };
    let mut out = x.to_vec();
    for v in &mut out[..first] {
        *v = x[first];
    }
    for v in &mut out[last + 1..] {
        *v = x[last];
    }
    for pair in good.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a > 1 {
            let span = (b - a) as f64;
            for i in a + 1..b {
                out[i] = x[a] + (x[b] - x[a]) * (i - a) as f64 / span;
            }
        }
    }
    Ok(out)
}

/// Replaces implausible HR and SC samples (including NaN) by linear
/// interpolation between the nearest valid neighbours; runs at either end take
/// the nearest valid value.
pub fn remove_artifacts(rec: &SubjectRecording) -> Result<SubjectRecording, SignalError> {
    let hr = repair_channel(&rec.hr, HR_VALID_RANGE, Channel::HeartRate)?;
    let sc = repair_channel(&rec.sc, SC_VALID_RANGE, Channel::SkinConductance)?;
    Ok(SubjectRecording { hr, sc, ..rec.clone() })
}
