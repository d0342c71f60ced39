use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::parse_config;
use super::runner::{load_run_record, run_with, RunOptions, RunRecord};
use crate::diagnostics::{csv_field, svg, write_file};
use crate::error::{Error, Result};

/// Headline numbers of one side of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub regime: String,
    pub status: String,
    pub final_train_accuracy: Option<f64>,
    pub final_val_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
}

/// Final-epoch gradient statistics of a layer present in both runs. Deltas are `b − a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDelta {
    pub layer: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub skew_a: f64,
    pub skew_b: f64,
}

impl LayerDelta {
    pub fn mean_delta(&self) -> f64 {
        self.mean_b - self.mean_a
    }

    pub fn std_delta(&self) -> f64 {
        self.std_b - self.std_a
    }

    pub fn skew_delta(&self) -> f64 {
        self.skew_b - self.skew_a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: RunSummary,
    pub b: RunSummary,
    pub layers: Vec<LayerDelta>,
}

fn summary(label: &str, r: &RunRecord) -> RunSummary {
    RunSummary {
        label: label.to_string(),
        regime: r.config.regime.to_string(),
        status: r.status.as_str().to_string(),
        final_train_accuracy: r.final_train_accuracy,
        final_val_accuracy: r.final_val_accuracy,
        final_train_loss: r.final_train_loss,
        final_val_loss: r.final_val_loss,
    }
}

/// Side-by-side summary and per-layer gradient deltas over the layers both runs share.
pub fn compare_records(a: &RunRecord, b: &RunRecord) -> Comparison {
    let gb = b.final_gradients();
    let layers = a
        .final_gradients()
        .into_iter()
        .filter_map(|ra| {
            let rb = gb.iter().find(|r| r.layer == ra.layer)?;
            Some(LayerDelta {
                layer: ra.layer.clone(),
                mean_a: ra.mean(),
                mean_b: rb.mean(),
                std_a: ra.std(),
                std_b: rb.std(),
                skew_a: ra.skew(),
                skew_b: rb.skew(),
            })
        })
        .collect();
    Comparison {
        a: summary("a", a),
        b: summary("b", b),
        layers,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn summary_csv(c: &Comparison) -> String {
    let mut out =
        String::from("run,regime,status,final_train_accuracy,final_val_accuracy,final_train_loss,final_val_loss\n");
    for s in [&c.a, &c.b] {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&s.label),
            s.regime,
            s.status,
            opt(s.final_train_accuracy),
            opt(s.final_val_accuracy),
            opt(s.final_train_loss),
            opt(s.final_val_loss)
        );
    }
    out
}

pub fn layer_csv(c: &Comparison) -> String {
    let mut out = String::from("layer,mean_a,mean_b,mean_delta,std_a,std_b,std_delta,skew_a,skew_b,skew_delta\n");
    for l in &c.layers {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(&l.layer),
            l.mean_a,
            l.mean_b,
            l.mean_delta(),
            l.std_a,
            l.std_b,
            l.std_delta(),
            l.skew_a,
            l.skew_b,
            l.skew_delta()
        );
    }
    out
}

/// Write `comparison.csv`, `layer_deltas.csv` and `comparison.svg` into `dir`.
pub fn write_comparison(dir: &Path, a: &RunRecord, b: &RunRecord) -> Result<(Comparison, Vec<PathBuf>)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = compare_records(a, b);
    let label_a = format!("a ({})", a.config.regime);
    let label_b = format!("b ({})", b.config.regime);
    let files = [
        ("comparison.csv", summary_csv(&c)),
        ("layer_deltas.csv", layer_csv(&c)),
        (
            "comparison.svg",
            svg::comparison_report((&label_a, &a.epochs, &a.gradients), (&label_b, &b.epochs, &b.gradients)),
        ),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        write_file(&path, &body)?;
        paths.push(path);
    }
    Ok((c, paths))
}

/// A finished run directory is loaded; a config file is run into `out_dir`.
pub fn load_or_run(path: &Path, out_dir: &Path, adjust: impl Fn(&mut super::ExperimentConfig)) -> Result<RunRecord> {
    if path.is_dir() {
        return load_run_record(path);
    }
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut config = parse_config(path)?;
    config.output.dir = out_dir.to_path_buf();
    adjust(&mut config);
    run_with(&config, &RunOptions::default())
}
