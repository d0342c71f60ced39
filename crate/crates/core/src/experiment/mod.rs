//! Config-driven training runs, checkpoints and run comparison.

mod checkpoint;
mod compare;
mod config;
mod runner;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointState, History, Manifest, TensorEntry, TensorGroup,
    CHECKPOINT_VERSION,
};
pub use compare::{
    compare_records, layer_csv, load_or_run, summary_csv, write_comparison, Comparison, LayerDelta, RunSummary,
};
pub use config::{
    parse_config, parse_config_str, ClipConfig, DataConfig, DataSource, ExperimentConfig, HistogramConfig,
    NetworkConfig, OutputConfig, Regime, ScheduleConfig, ScheduleKind, SgdSection, SyntheticConfig,
};
pub use runner::{
    checkpoint_dir, derive_seed, evaluate, load_data, load_run_record, run, run_with, RunOptions, RunRecord, RunStatus,
    DIVERGENCE_FACTOR, DIVERGENCE_PATIENCE, RUN_RECORD_FILE,
};
