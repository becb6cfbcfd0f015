//! Report rendering: JSON, per-subject CSV and a markdown results table.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stressnet_core::eval::{MetricsReport, ModelMetrics, SubjectMetrics};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported report format {0:?} (expected json, csv or md)")]
    UnsupportedFormat(String),
    #[error("report CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("report CSV is empty or mixes datasets/seeds")]
    Inconsistent,
}

impl FromStr for ReportFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(ReportError::UnsupportedFormat(other.into())),
        }
    }
}

/// Comma-separated list such as `json,csv,md`.
pub fn parse_formats(s: &str) -> Result<Vec<ReportFormat>, ReportError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let f: ReportFormat = part.parse()?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(ReportError::UnsupportedFormat(s.into()));
    }
    Ok(out)
}

pub fn render(report: &MetricsReport, format: ReportFormat) -> Result<String, ReportError> {
    match format {
        ReportFormat::Json => to_json(report),
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Md => Ok(to_markdown(report)),
    }
}

pub fn to_json(report: &MetricsReport) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(s: &str) -> Result<MetricsReport, ReportError> {
    Ok(serde_json::from_str(s)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    dataset: String,
    seed: u64,
    model: String,
    subject_id: String,
    f1: f64,
    kappa: f64,
    n_test: usize,
}

/// One row per model and subject.
pub fn to_csv(report: &MetricsReport) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for m in &report.models {
        for s in &m.per_subject {
            w.serialize(CsvRow {
                dataset: report.dataset.clone(),
                seed: report.seed,
                model: m.name.clone(),
                subject_id: s.subject_id.clone(),
                f1: s.f1,
                kappa: s.kappa,
                n_test: s.n_test,
            })?;
        }
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
}

/// Rebuilds a report from its CSV form; aggregates are recomputed.
pub fn from_csv(s: &str) -> Result<MetricsReport, ReportError> {
    let mut rdr = csv::Reader::from_reader(s.as_bytes());
    let mut head: Option<(String, u64)> = None;
    let mut models: Vec<(String, Vec<SubjectMetrics>)> = Vec::new();
    for row in rdr.deserialize::<CsvRow>() {
        let row = row?;
        match &head {
            None => head = Some((row.dataset.clone(), row.seed)),
            Some((d, seed)) if *d != row.dataset || *seed != row.seed => return Err(ReportError::Inconsistent),
            Some(_) => {}
        }
        let metrics = SubjectMetrics { subject_id: row.subject_id, f1: row.f1, kappa: row.kappa, n_test: row.n_test };
        match models.iter_mut().find(|(n, _)| *n == row.model) {
            Some((_, v)) => v.push(metrics),
            None => models.push((row.model, vec![metrics])),
        }
    }
    let (dataset, seed) = head.ok_or(ReportError::Inconsistent)?;
    let models = models.into_iter().map(|(n, per)| ModelMetrics::from_subjects(&n, per)).collect();
    Ok(MetricsReport { dataset, seed, models })
}

/// Model / F-Score / Kappa table, mean ± std across subjects.
pub fn to_markdown(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Dataset: {} (seed {})", report.dataset, report.seed);
    s.push('\n');
    s.push_str("| Model | F-Score | Kappa |\n");
    s.push_str("|---|---|---|\n");
    for m in &report.models {
        let _ = writeln!(
            s,
            "| {} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
            m.name, m.mean_f1, m.std_f1, m.mean_kappa, m.std_kappa
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsReport {
        let per = |a: f64, b: f64| {
            vec![
                SubjectMetrics { subject_id: "S01".into(), f1: a, kappa: a - 0.1, n_test: 20 },
                SubjectMetrics { subject_id: "S02".into(), f1: b, kappa: b / 3.0, n_test: 19 },
            ]
        };
        MetricsReport {
            dataset: "toy".into(),
            seed: 7,
            models: vec![ModelMetrics::from_subjects("LR", per(0.7, 0.1 + 0.2)), ModelMetrics::from_subjects("MT-NN", per(1.0, 0.9))],
        }
    }

    #[test]
    fn csv_json_round_trip_is_exact() {
        let r = sample();
        let back = from_csv(&to_csv(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(from_json(&to_json(&back).unwrap()).unwrap(), r);
    }

    #[test]
    fn markdown_has_a_row_per_model() {
        let md = to_markdown(&sample());
        assert_eq!(md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Model")).count(), 2);
        assert!(md.contains("| MT-NN | 0.950 ± 0.050 |"));
    }

    #[test]
    fn formats_parse() {
        assert_eq!(parse_formats("json,csv,md").unwrap(), ReportFormat::ALL.to_vec());
        assert!(matches!(parse_formats("json,xml"), Err(ReportError::UnsupportedFormat(f)) if f == "xml"));
    }
}
