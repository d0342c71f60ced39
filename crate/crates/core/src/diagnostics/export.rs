use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::histogram::{GradHistogramRecord, BIN_COUNT};
use super::metrics::EpochMetrics;
use super::svg;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            "svg" => Ok(ExportFormat::Svg),
            other => Err(Error::Config(format!("unknown export format `{other}`"))),
        }
    }
}

/// Header of the gradient CSV.
pub fn gradient_csv_header() -> String {
    let mut cols: Vec<String> = ["epoch", "phase", "layer", "mean", "std", "skew", "max"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..BIN_COUNT).map(|i| format!("bin_{i}")));
    cols.push("underflow".into());
    cols.push("overflow".into());
    cols.join(",")
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per record, in the order given.
pub fn gradients_csv(records: &[GradHistogramRecord]) -> String {
    let mut out = gradient_csv_header();
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            csv_field(&r.phase),
            csv_field(&r.layer),
            r.mean(),
            r.std(),
            r.skew(),
            r.max()
        );
        for c in &r.counts {
            let _ = write!(out, ",{c}");
        }
        let _ = writeln!(out, ",{},{}", r.underflow, r.overflow);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Per-epoch losses, accuracies and optimizer settings. Wall time and memory
/// live in [`timing_csv`] so this file is reproducible byte for byte.
pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy,lr,clip_threshold,clip_events\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.epoch,
            m.train_loss,
            m.train_accuracy,
            m.val_loss,
            m.val_accuracy,
            m.lr,
            opt(m.clip_threshold),
            m.clip_events
        );
    }
    out
}

pub fn timing_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,wall_seconds,peak_bytes\n");
    for m in metrics {
        let _ = writeln!(out, "{},{},{}", m.epoch, m.wall_seconds, m.peak_bytes);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct GradientBody {
    records: Vec<GradHistogramRecord>,
}

#[derive(Serialize, Deserialize)]
struct MetricsBody {
    epochs: Vec<EpochMetrics>,
}

fn to_versioned_json<T: Serialize>(body: T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&Versioned {
        schema_version: SCHEMA_VERSION,
        body,
    })?;
    s.push('\n');
    Ok(s)
}

fn from_versioned_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let doc: Versioned<T> = serde_json::from_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            format: "diagnostics JSON",
            reason: format!("unsupported schema_version {}", doc.schema_version),
        });
    }
    Ok(doc.body)
}

pub fn gradients_json(records: &[GradHistogramRecord]) -> Result<String> {
    to_versioned_json(GradientBody {
        records: records.to_vec(),
    })
}

pub fn parse_gradients_json(text: &str) -> Result<Vec<GradHistogramRecord>> {
    from_versioned_json::<GradientBody>(text).map(|b| b.records)
}

pub fn metrics_json(metrics: &[EpochMetrics]) -> Result<String> {
    to_versioned_json(MetricsBody {
        epochs: metrics.to_vec(),
    })
}

pub fn parse_metrics_json(text: &str) -> Result<Vec<EpochMetrics>> {
    from_versioned_json::<MetricsBody>(text).map(|b| b.epochs)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write the diagnostics of one run into `dir` in the given format and return
/// the files written.
pub fn export(
    dir: &Path,
    records: &[GradHistogramRecord],
    metrics: &[EpochMetrics],
    format: ExportFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<(&str, String)> = match format {
        ExportFormat::Csv => vec![
            ("gradients.csv", gradients_csv(records)),
            ("metrics.csv", metrics_csv(metrics)),
            ("timing.csv", timing_csv(metrics)),
        ],
        ExportFormat::Json => vec![
            ("gradients.json", gradients_json(records)?),
            ("metrics.json", metrics_json(metrics)?),
        ],
        ExportFormat::Svg => vec![("report.svg", svg::run_report(metrics, records))],
    };
    files
        .into_iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            write_file(&path, &body)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<GradHistogramRecord> {
        vec![
            GradHistogramRecord::from_values("stem.conv", 0, "train", &[0.1, -0.25, 3e-7, 0.0]),
            GradHistogramRecord::from_values("fc", 0, "train", &[1.5, 2.0 / 3.0]),
        ]
    }

    #[test]
    fn empty_csv_is_header_only() {
        let csv = gradients_csv(&[]);
        assert_eq!(csv.lines().count(), 1);
        let header = csv.trim_end();
        assert!(header.starts_with("epoch,phase,layer,mean,std,skew,max,bin_0,"));
        assert!(header.ends_with(",bin_63,underflow,overflow"));
        assert_eq!(header.split(',').count(), 7 + 64 + 2);
    }

    #[test]
    fn csv_rows_have_all_columns() {
        let csv = gradients_csv(&records());
        for line in csv.lines() {
            assert_eq!(line.split(',').count(), 73);
        }
        assert_eq!(csv, gradients_csv(&records()));
    }

    #[test]
    fn json_round_trip() {
        let text = gradients_json(&records()).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert_eq!(parse_gradients_json(&text).unwrap(), records());
        let bumped = text.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(parse_gradients_json(&bumped).is_err());
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, "x").unwrap();
        assert!(export(&file.join("sub"), &records(), &[], ExportFormat::Csv).is_err());
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
