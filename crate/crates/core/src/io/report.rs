//! Experiment reports as long-form CSV or JSON.
//!
//! Floats are rendered with 9 significant digits in both encodings; absent
//! values are empty CSV fields and JSON `null`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 9] = [
    "experiment",
    "model",
    "category",
    "condition",
    "run",
    "mean_influence",
    "std",
    "cv",
    "extra_metric",
];

pub const SUMMARY_COLUMNS: [&str; 5] = ["experiment", "model", "category", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub model: String,
    pub category: String,
    pub condition: String,
    pub run: Option<usize>,
    pub mean_influence: f64,
    pub std: Option<f64>,
    pub cv: Option<f64>,
    pub extra_metric: Option<f64>,
}

/// Aggregate statistic such as a Spearman ρ or a late/early ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub category: String,
    pub metric: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub model: String,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryEntry>,
}

impl ExperimentReport {
    pub fn new(experiment: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            experiment: experiment.into(),
            model: model.into(),
            rows: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn summary_value(&self, category: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.category == category && s.metric == metric)
            .and_then(|s| s.value)
    }

    /// Copy with every float rounded to 9 significant digits, i.e. exactly
    /// what a written report parses back to.
    pub fn rounded(&self) -> Self {
        let r = |v: Option<f64>| v.map(round_sig9);
        Self {
            experiment: self.experiment.clone(),
            model: self.model.clone(),
            rows: self
                .rows
                .iter()
                .map(|row| ReportRow {
                    mean_influence: round_sig9(row.mean_influence),
                    std: r(row.std),
                    cv: r(row.cv),
                    extra_metric: r(row.extra_metric),
                    ..row.clone()
                })
                .collect(),
            summary: self
                .summary
                .iter()
                .map(|s| SummaryEntry {
                    value: r(s.value),
                    ..s.clone()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Input(format!("unknown report format {other:?}"))),
        }
    }
}

/// `printf("%.9g")`-style rendering.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let fixed = format!("{:.*}", (8 - exp) as usize, x);
        trim_fraction(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_fraction(mant), exp.abs())
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn round_sig9(x: f64) -> f64 {
    if x.is_finite() {
        format_sig9(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig9).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

/// Sidecar path holding the summary of a CSV report: `x.csv` → `x.summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

/// Writes `report` to `path`. CSV output also writes a summary sidecar next to it.
pub fn write_report(report: &ExperimentReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    match format {
        ReportFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(&report.rounded())?;
            bytes.push(b'\n');
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
            w.write_record(CSV_COLUMNS).map_err(|e| csv_err(path, e))?;
            for r in &report.rows {
                w.write_record([
                    r.experiment.clone(),
                    r.model.clone(),
                    r.category.clone(),
                    r.condition.clone(),
                    r.run.map(|v| v.to_string()).unwrap_or_default(),
                    format_sig9(r.mean_influence),
                    opt(r.std),
                    opt(r.cv),
                    opt(r.extra_metric),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;

            let spath = summary_path(path);
            let mut w = csv::Writer::from_path(&spath).map_err(|e| csv_err(&spath, e))?;
            w.write_record(SUMMARY_COLUMNS).map_err(|e| csv_err(&spath, e))?;
            for s in &report.summary {
                w.write_record([
                    report.experiment.clone(),
                    report.model.clone(),
                    s.category.clone(),
                    s.metric.clone(),
                    opt(s.value),
                ])
                .map_err(|e| csv_err(&spath, e))?;
            }
            w.flush().map_err(|e| Error::io(&spath, e))
        }
    }
}

fn parse_opt(field: &str, what: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        field
            .parse()
            .map(Some)
            .map_err(|_| Error::Input(format!("column {what}: {field:?} is not a number")))
    }
}

fn read_csv_records(path: &Path, columns: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(columns.iter().copied()) {
        return Err(Error::Input(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.records().map(|rec| rec.map_err(|e| csv_err(path, e))).collect()
}

/// Parses a report CSV, checking the fixed column schema.
pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    read_csv_records(path, &CSV_COLUMNS)?
        .iter()
        .map(|rec| {
            let run = if rec[4].is_empty() {
                None
            } else {
                Some(rec[4].parse().map_err(|_| Error::Input(format!("bad run index {:?}", &rec[4])))?)
            };
            Ok(ReportRow {
                experiment: rec[0].to_string(),
                model: rec[1].to_string(),
                category: rec[2].to_string(),
                condition: rec[3].to_string(),
                run,
                mean_influence: parse_opt(&rec[5], "mean_influence")?
                    .ok_or_else(|| Error::Input("mean_influence is required".into()))?,
                std: parse_opt(&rec[6], "std")?,
                cv: parse_opt(&rec[7], "cv")?,
                extra_metric: parse_opt(&rec[8], "extra_metric")?,
            })
        })
        .collect()
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryEntry>> {
    let path = path.as_ref();
    read_csv_records(path, &SUMMARY_COLUMNS)?
        .iter()
        .map(|rec| {
            Ok(SummaryEntry {
                category: rec[2].to_string(),
                metric: rec[3].to_string(),
                value: parse_opt(&rec[4], "value")?,
            })
        })
        .collect()
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentReport {
        let mut r = ExperimentReport::new("temperature", "synthetic");
        r.rows.push(ReportRow {
            experiment: "temperature".into(),
            model: "synthetic".into(),
            category: "capital".into(),
            condition: "0.3".into(),
            run: Some(0),
            mean_influence: 1.0 / 3.0,
            std: Some(0.125),
            cv: Some(0.375),
            extra_metric: None,
        });
        r.rows.push(ReportRow {
            experiment: "temperature".into(),
            model: "synthetic".into(),
            category: "a,b".into(),
            condition: "1.5".into(),
            run: None,
            mean_influence: 123456.789012345,
            std: None,
            cv: None,
            extra_metric: Some(-2.5e-7),
        });
        r.summary.push(SummaryEntry {
            category: "all".into(),
            metric: "spearman_rho".into(),
            value: Some(-0.3),
        });
        r
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456.789012345), "123456.789");
        assert_eq!(format_sig9(-2.5e-7), "-2.5e-07");
        assert_eq!(format_sig9(1.23456789012e12), "1.23456789e+12");
        assert_eq!(format_sig9(9.9999999999), "10");
        assert_eq!(format_sig9(127.0), "127");
    }

    #[test]
    fn empty_report_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report(&ExperimentReport::new("x", "m"), &p, ReportFormat::Csv).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "experiment,model,category,condition,run,mean_influence,std,cv,extra_metric\n"
        );
        assert!(read_report_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn golden_csv_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_report(&sample(), &p, ReportFormat::Csv).unwrap();
        let expect = "experiment,model,category,condition,run,mean_influence,std,cv,extra_metric\n\
                      temperature,synthetic,capital,0.3,0,0.333333333,0.125,0.375,\n\
                      temperature,synthetic,\"a,b\",1.5,,123456.789,,,-2.5e-07\n";
        assert_eq!(fs::read_to_string(&p).unwrap(), expect);
        let summary = fs::read_to_string(dir.path().join("r.summary.csv")).unwrap();
        assert_eq!(
            summary,
            "experiment,model,category,metric,value\ntemperature,synthetic,all,spearman_rho,-0.3\n"
        );
        assert_eq!(read_report_csv(&p).unwrap(), sample().rounded().rows);
    }

    #[test]
    fn json_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_report(&sample(), &p, ReportFormat::Json).unwrap();
        assert_eq!(read_report_json(&p).unwrap(), sample().rounded());
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(read_report_csv(&p).is_err());
    }
}
