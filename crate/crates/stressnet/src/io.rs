//! On-disk formats: recording and span CSVs, dataset manifests, feature
//! tables and baseline statistics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stressnet_core::features::{BaselineStats, FeatureVector, WindowSpec, FEATURE_NAMES, N_FEATURES};
use stressnet_core::signal::{upsample_channel, Label, LabelSpan, SignalError, SubjectRecording, TrialKind};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: required column {column:?} is missing")]
    MissingChannel { path: PathBuf, column: String },
    #[error("{path}: malformed value in column {column:?} of data row {row}")]
    MalformedRow { path: PathBuf, row: usize, column: String },
    #[error("{path}: no data rows")]
    EmptyFile { path: PathBuf },
    #[error("{path}: time column is not increasing at data row {row}")]
    NonMonotonicTime { path: PathBuf, row: usize },
    #[error("{path}: {source}")]
    Signal { path: PathBuf, source: SignalError },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl IoError {
    pub fn fs(path: &Path, source: std::io::Error) -> Self {
        IoError::Fs { path: path.to_path_buf(), source }
    }

    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        IoError::Invalid { path: path.to_path_buf(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Segments between marker peaks are labeled from the trial template.
    MarkerDerived,
    /// Each subject names a `start_s,end_s,label` file.
    SpanFile,
    /// Labels come from the recording's own `label` column.
    LabelColumn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSubject {
    pub subject_id: String,
    /// Recording path, relative to the manifest's directory.
    pub path: String,
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<String>,
    /// Native HR rate when it is lower than the manifest rate; empty HR cells
    /// are then skipped and the remaining values upsampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_rate_hz: Option<f64>,
}

fn default_format() -> String {
    "csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub sample_rate_hz: f64,
    pub label_mode: LabelMode,
    #[serde(default)]
    pub trial_template: Vec<TrialKind>,
    pub subjects: Vec<ManifestSubject>,
}

impl DatasetManifest {
    pub fn validate(&self, path: &Path) -> Result<(), IoError> {
        if self.subjects.is_empty() {
            return Err(IoError::invalid(path, "manifest lists no subjects"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(IoError::invalid(path, "sample_rate_hz must be positive"));
        }
        for (i, s) in self.subjects.iter().enumerate() {
            if self.subjects[..i].iter().any(|o| o.subject_id == s.subject_id) {
                return Err(IoError::invalid(path, format!("duplicate subject_id {:?}", s.subject_id)));
            }
            if s.format != "csv" {
                return Err(IoError::invalid(path, format!("unsupported format {:?} for {}", s.format, s.subject_id)));
            }
            if self.label_mode == LabelMode::SpanFile && s.spans.is_none() {
                return Err(IoError::invalid(path, format!("subject {} has no span file", s.subject_id)));
            }
        }
        if self.label_mode == LabelMode::MarkerDerived && self.trial_template.is_empty() {
            return Err(IoError::invalid(path, "marker-derived labels need a trial_template"));
        }
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::fs(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| IoError::fs(path, e))
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IoError> {
    let m: DatasetManifest = read_json(path)?;
    m.validate(path)?;
    Ok(m)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    let file = File::open(path).map_err(|e| IoError::fs(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    let file = File::create(path).map_err(|e| IoError::fs(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_path_buf(), source }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_label(s: &str) -> Result<Option<Label>, ()> {
    match s {
        "" | "-" => Ok(None),
        "0" => Ok(Some(Label::Baseline)),
        "1" => Ok(Some(Label::Stress)),
        _ => Err(()),
    }
}

/// Parses a `t,hr,sc[,marker][,label]` recording. Rows are 1-based data rows
/// in error messages. With `hr_rate_hz` set, HR cells may be empty and the
/// present values are upsampled to `sample_rate_hz`.
pub fn load_recording(
    path: &Path,
    subject_id: &str,
    sample_rate_hz: f64,
    hr_rate_hz: Option<f64>,
) -> Result<SubjectRecording, IoError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| IoError::MissingChannel { path: path.to_path_buf(), column: name.into() });
    let (ti, hi, si) = (need("t")?, need("hr")?, need("sc")?);
    let (mi, li) = (col("marker"), col("label"));
    let sparse_hr = hr_rate_hz.is_some_and(|r| r < sample_rate_hz);

    let mut t_prev = f64::NEG_INFINITY;
    let (mut t0, mut hr, mut sc) = (None, Vec::new(), Vec::new());
    let mut marker = mi.map(|_| Vec::new());
    let mut labels = li.map(|_| Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(csv_err(path))?;
        let malformed = |c: usize| IoError::MalformedRow { path: path.to_path_buf(), row, column: headers[c].to_string() };
        let num = |c: usize| parse_finite(rec.get(c).unwrap_or("")).ok_or_else(|| malformed(c));
        let t = num(ti)?;
        if t <= t_prev {
            return Err(IoError::NonMonotonicTime { path: path.to_path_buf(), row });
        }
        t_prev = t;
        t0.get_or_insert(t);
        let h = rec.get(hi).unwrap_or("");
        if !(sparse_hr && h.is_empty()) {
            hr.push(parse_finite(h).ok_or_else(|| malformed(hi))?);
        }
        sc.push(num(si)?);
        if let (Some(c), Some(m)) = (mi, marker.as_mut()) {
            m.push(num(c)?);
        }
        if let (Some(c), Some(l)) = (li, labels.as_mut()) {
            l.push(parse_label(rec.get(c).unwrap_or("")).map_err(|_| malformed(c))?);
        }
    }
    let Some(t0) = t0 else {
        return Err(IoError::EmptyFile { path: path.to_path_buf() });
    };
    let signal = |source| IoError::Signal { path: path.to_path_buf(), source };
    if let Some(rate) = hr_rate_hz.filter(|r| *r < sample_rate_hz) {
        if hr.is_empty() {
            return Err(IoError::MissingChannel { path: path.to_path_buf(), column: "hr".into() });
        }
        hr = upsample_channel(&hr, rate, sample_rate_hz).map_err(signal)?;
        let last = *hr.last().expect("non-empty after upsampling");
        hr.resize(sc.len(), last);
    }
    let mut out = SubjectRecording::new(subject_id.to_string(), sample_rate_hz, t0, hr, sc).map_err(signal)?;
    if let Some(m) = marker {
        out = out.with_marker(m).map_err(signal)?;
    }
    if let Some(l) = labels {
        out = out.with_labels(l).map_err(signal)?;
    }
    Ok(out)
}

/// Writes `t,hr,sc` (plus marker and label columns when present).
pub fn write_recording(path: &Path, rec: &SubjectRecording) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t", "hr", "sc"];
    if rec.marker.is_some() {
        header.push("marker");
    }
    if rec.labels.is_some() {
        header.push("label");
    }
    w.write_record(&header).map_err(csv_err(path))?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..rec.len() {
        row.clear();
        row.push(rec.time_of(i).to_string());
        row.push(rec.hr[i].to_string());
        row.push(rec.sc[i].to_string());
        if let Some(m) = &rec.marker {
            row.push(m[i].to_string());
        }
        if let Some(l) = &rec.labels {
            row.push(l[i].map_or_else(String::new, |l| l.as_u8().to_string()));
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct SpanRow {
    start_s: f64,
    end_s: f64,
    label: u8,
}

pub fn load_spans(path: &Path) -> Result<Vec<LabelSpan>, IoError> {
    let mut rdr = csv_reader(path)?;
    let mut spans = Vec::new();
    for (r, row) in rdr.deserialize::<SpanRow>().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let malformed = |column: &str| IoError::MalformedRow { path: path.to_path_buf(), row: r + 1, column: column.into() };
        let label = Label::from_u8(row.label).ok_or_else(|| malformed("label"))?;
        let span = LabelSpan::new(row.start_s, row.end_s, label).map_err(|_| malformed("end_s"))?;
        spans.push(span);
    }
    stressnet_core::signal::validate_spans(&spans).map_err(|source| IoError::Signal { path: path.to_path_buf(), source })?;
    Ok(spans)
}

pub fn write_spans(path: &Path, spans: &[LabelSpan]) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    for s in spans {
        w.serialize(SpanRow { start_s: s.start_s, end_s: s.end_s, label: s.label.as_u8() }).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}

pub fn feature_header() -> Vec<String> {
    let mut h = vec!["subject_id".to_string(), "window_start_s".into(), "label".into()];
    h.extend((0..N_FEATURES).map(|i| format!("f{i:02}")));
    h
}

pub fn write_features<'a>(path: &Path, vectors: impl IntoIterator<Item = &'a FeatureVector>) -> Result<(), IoError> {
    let mut w = csv_writer(path)?;
    w.write_record(feature_header()).map_err(csv_err(path))?;
    for v in vectors {
        let mut row = vec![v.subject_id.clone(), v.window_start_s.to_string(), v.label.as_u8().to_string()];
        row.extend(v.values.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| IoError::fs(path, e))
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureVector>, IoError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let expected = feature_header();
    if headers.len() != expected.len() || headers.iter().zip(&expected).any(|(a, b)| a != b) {
        let missing = expected.iter().find(|c| !headers.iter().any(|h| h == c.as_str()));
        return Err(match missing {
            Some(c) => IoError::MissingChannel { path: path.to_path_buf(), column: c.clone() },
            None => IoError::invalid(path, "feature columns are out of order"),
        });
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let malformed = |c: usize| IoError::MalformedRow { path: path.to_path_buf(), row: r + 1, column: expected[c].clone() };
        let label = match rec.get(2) {
            Some("0") => Label::Baseline,
            Some("1") => Label::Stress,
            _ => return Err(malformed(2)),
        };
        let mut values = [0.0; N_FEATURES];
        for (j, v) in values.iter_mut().enumerate() {
            *v = parse_finite(rec.get(3 + j).unwrap_or("")).ok_or_else(|| malformed(3 + j))?;
        }
        out.push(FeatureVector {
            subject_id: rec.get(0).unwrap_or("").to_string(),
            window_start_s: parse_finite(rec.get(1).unwrap_or("")).ok_or_else(|| malformed(1))?,
            label,
            values,
        });
    }
    if out.is_empty() {
        return Err(IoError::EmptyFile { path: path.to_path_buf() });
    }
    Ok(out)
}

/// Sidecar written next to a feature table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub dataset: String,
    pub window: WindowSpec,
    pub normalized: bool,
    pub feature_names: Vec<String>,
}

impl FeatureMeta {
    pub fn new(dataset: &str, window: WindowSpec, normalized: bool) -> Self {
        Self { dataset: dataset.into(), window, normalized, feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect() }
    }

    /// `features.csv` → `features.meta.json`.
    pub fn path_for(features: &Path) -> PathBuf {
        features.with_extension("meta.json")
    }
}

pub fn write_baseline_stats(path: &Path, stats: &BaselineStats) -> Result<(), IoError> {
    write_json(path, stats)
}

pub fn ensure_dir(path: &Path) -> Result<(), IoError> {
    fs::create_dir_all(path).map_err(|e| IoError::fs(path, e))?;
    // Fail early on read-only locations rather than after the work is done.
    let probe = path.join(".stressnet-write-probe");
    File::create(&probe).and_then(|mut f| f.write_all(b"")).map_err(|e| IoError::fs(path, e))?;
    fs::remove_file(&probe).map_err(|e| IoError::fs(&probe, e))
}
