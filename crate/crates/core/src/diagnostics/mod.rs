//! Gradient-magnitude histograms, per-epoch metrics, time and memory
//! accounting, and CSV/JSON/SVG export.

mod export;
mod histogram;
mod metrics;
pub mod svg;

pub(crate) use export::{csv_field, write_file};
pub use export::{
    export, gradient_csv_header, gradients_csv, gradients_json, metrics_csv, metrics_json, parse_gradients_json,
    parse_metrics_json, timing_csv, ExportFormat, SCHEMA_VERSION,
};
pub use histogram::{
    bin_edges, record_gradients, record_gradients_with_phase, GradHistogramRecord, Moments, BIN_COUNT, MAX_MAGNITUDE,
    MIN_MAGNITUDE,
};
pub use metrics::{measure_epoch, top1_accuracy, EpochCost, EpochMetrics};
