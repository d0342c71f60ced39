use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::checkpoint::{load_checkpoint, save_checkpoint, CheckpointState};
use super::config::{DataSource, ExperimentConfig};
use crate::data::{
    apply_normalization, augment, batches, channel_stats, load_cifar_binary, load_idx, synthetic_dataset,
    AugmentPolicy, BatchPlan, Dataset, SyntheticSpec,
};
use crate::diagnostics::{
    self, measure_epoch, record_gradients, svg, top1_accuracy, EpochMetrics, ExportFormat, GradHistogramRecord,
};
use crate::error::{Error, Result};
use crate::layers::{Mode, Network};
use crate::optim::{clip_gradients_global_norm, clip_threshold_at, lr_at, zero_grads, ClipSpec, ScheduleSpec, Sgd};
use crate::tensor::Tape;

/// A run is declared diverged once its epoch train loss exceeds this multiple of
/// the first step's loss for [`DIVERGENCE_PATIENCE`] consecutive epochs.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const DIVERGENCE_PATIENCE: usize = 3;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
    Error,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Diverged => "diverged",
            RunStatus::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub status: RunStatus,
    /// Epoch in which the run diverged or failed.
    pub failed_epoch: Option<usize>,
    pub message: Option<String>,
    pub epochs: Vec<EpochMetrics>,
    pub final_train_accuracy: Option<f64>,
    pub final_val_accuracy: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    /// Per-layer gradient histograms, one record per (epoch, layer), merged over the epoch's steps.
    pub gradients: Vec<GradHistogramRecord>,
}

impl RunRecord {
    /// The record with wall-clock times zeroed, for comparing reruns.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        for m in &mut r.epochs {
            m.wall_seconds = 0.0;
        }
        r
    }

    /// Gradient records of the last recorded epoch.
    pub fn final_gradients(&self) -> Vec<&GradHistogramRecord> {
        let last = self.gradients.iter().map(|r| r.epoch).max();
        self.gradients.iter().filter(|r| Some(r.epoch) == last).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Continue from this checkpoint directory.
    pub resume_from: Option<PathBuf>,
    /// Stop (and checkpoint) once this many epochs are complete, keeping the
    /// schedule of the full run.
    pub stop_after: Option<usize>,
    /// Skip writing any files.
    pub dry: bool,
}

/// Train as configured and write all artifacts into `config.output.dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    run_with(config, &RunOptions::default())
}

/// `(train, validation)` standardized with training-split statistics.
pub fn load_data(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &config.data;
    let full = match d.source {
        DataSource::Synthetic => synthetic_dataset(&SyntheticSpec {
            classes: d.synthetic.classes,
            samples: d.synthetic.samples,
            channels: d.synthetic.channels,
            height: d.synthetic.height,
            width: d.synthetic.width,
            noise: d.synthetic.noise,
            seed: d.seed,
        })?,
        DataSource::Idx => {
            let missing = || Error::Config("data.source = idx requires data.images and data.labels".into());
            load_idx(
                d.images.as_ref().ok_or_else(missing)?,
                d.labels.as_ref().ok_or_else(missing)?,
            )?
        }
        DataSource::Cifar => load_cifar_binary(&d.files)?,
    };
    let full = match d.limit {
        Some(limit) if limit < full.len() => full.subset(&(0..limit).collect::<Vec<_>>())?,
        _ => full,
    };
    let (train, val) = full.split(d.validation_fraction, d.seed)?;
    let stats = channel_stats(&train)?;
    Ok((apply_normalization(&train, &stats)?, apply_normalization(&val, &stats)?))
}

/// Mixes run seed, epoch, step and purpose into an independent 64-bit seed.
pub fn derive_seed(seed: u64, epoch: usize, step: usize, purpose: u64) -> u64 {
    let mut z = seed;
    for v in [epoch as u64, step as u64, purpose] {
        z = z
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(v.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const AUGMENT_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Mean cross-entropy and top-1 accuracy over a dataset in eval mode.
pub fn evaluate(network: &mut Network<f32>, ds: &Dataset) -> Result<(f64, f64)> {
    let order: Vec<usize> = (0..ds.len()).collect();
    let (mut loss, mut correct) = (0.0, 0.0);
    for chunk in order.chunks(EVAL_BATCH) {
        let (images, labels) = ds.gather(chunk)?;
        let logits = network.predict(&images, Mode::Eval)?;
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let ce = tape.softmax_cross_entropy(l, &labels)?;
        loss += tape.value(ce).item() as f64 * chunk.len() as f64;
        correct += top1_accuracy(&logits, &labels)? * chunk.len() as f64;
    }
    Ok((loss / ds.len() as f64, correct / ds.len() as f64))
}

struct Trainer<'a> {
    config: &'a ExperimentConfig,
    train: Dataset,
    val: Dataset,
    network: Network<f32>,
    sgd: Sgd<f32>,
    schedule: ScheduleSpec,
    clip: ClipSpec,
    policy: AugmentPolicy,
    metrics: Vec<EpochMetrics>,
    gradients: Vec<GradHistogramRecord>,
    initial_loss: Option<f64>,
    high_loss_streak: usize,
}

enum EpochOutcome {
    Done(EpochMetrics),
    Diverged(String),
}

fn is_numeric_failure(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

impl Trainer<'_> {
    fn train_epoch(&mut self, epoch: usize) -> Result<EpochOutcome> {
        let seed = self.config.seed;
        let plan = BatchPlan {
            batch_size: self.config.batch_size,
            seed,
            drop_last: false,
            epoch: epoch as u64,
        };
        let steps = self.train.len().div_ceil(self.config.batch_size);
        let epoch_lr = lr_at(&self.schedule, epoch as f64)?;
        let tau = clip_threshold_at(&self.clip, epoch);
        let record = self.config.output.diagnostics;
        let mut epoch_grads: Vec<GradHistogramRecord> = Vec::new();
        let (mut loss_sum, mut correct, mut seen, mut clip_events) = (0.0, 0.0, 0usize, 0usize);
        for (step, batch) in batches(&self.train, &plan)?.enumerate() {
            let batch = batch?;
            let lr = if self.schedule.per_iteration() {
                lr_at(&self.schedule, epoch as f64 + step as f64 / steps as f64)?
            } else {
                epoch_lr
            };
            let images = augment(
                &batch.images,
                self.policy,
                derive_seed(seed, epoch, step, AUGMENT_STREAM),
            )?;
            zero_grads(self.network.parameters_mut());
            let dropout_seed = derive_seed(seed, epoch, step, DROPOUT_STREAM);
            let (loss, logits) = match self.network.forward_backward(&images, &batch.labels, dropout_seed) {
                Ok(out) => out,
                Err(e) if is_numeric_failure(&e) => return Ok(EpochOutcome::Diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Ok(EpochOutcome::Diverged(format!("non-finite loss at step {step}")));
            }
            self.initial_loss.get_or_insert(loss);
            if record {
                let step_records = record_gradients(&self.network, epoch)?;
                if epoch_grads.is_empty() {
                    epoch_grads = step_records;
                } else {
                    for (acc, r) in epoch_grads.iter_mut().zip(&step_records) {
                        acc.merge(r)?;
                    }
                }
            }
            if let Some(tau) = tau {
                if clip_gradients_global_norm(self.network.parameters_mut(), tau)?.clipped() {
                    clip_events += 1;
                }
            }
            match self.sgd.step(self.network.parameters_mut(), lr) {
                Ok(()) => {}
                Err(e) if is_numeric_failure(&e) => return Ok(EpochOutcome::Diverged(e.to_string())),
                Err(e) => return Err(e),
            }
            self.network.check_weight_norms()?;
            let n = batch.labels.len();
            loss_sum += loss * n as f64;
            correct += top1_accuracy(&logits, &batch.labels)? * n as f64;
            seen += n;
        }
        let (val_loss, val_accuracy) = match evaluate(&mut self.network, &self.val) {
            Ok(v) => v,
            Err(e) if is_numeric_failure(&e) => return Ok(EpochOutcome::Diverged(e.to_string())),
            Err(e) => return Err(e),
        };
        if !val_loss.is_finite() {
            return Ok(EpochOutcome::Diverged("non-finite validation loss".into()));
        }
        self.gradients.extend(epoch_grads);
        Ok(EpochOutcome::Done(EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: correct / seen as f64,
            val_loss,
            val_accuracy,
            lr: epoch_lr,
            clip_threshold: tau,
            clip_events,
            wall_seconds: 0.0,
            peak_bytes: 0,
        }))
    }

    fn checkpoint(&self, out_dir: &Path, epochs_completed: usize) -> Result<PathBuf> {
        save_checkpoint(
            &checkpoint_dir(out_dir, epochs_completed),
            &CheckpointState {
                epochs_completed,
                seed: self.config.seed,
                network: &self.network,
                sgd: &self.sgd,
                initial_loss: self.initial_loss,
                high_loss_streak: self.high_loss_streak,
                metrics: &self.metrics,
                gradients: &self.gradients,
            },
        )
    }
}

/// Where the checkpoint taken after `epochs_completed` epochs lives.
pub fn checkpoint_dir(out_dir: &Path, epochs_completed: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epochs_completed:04}"))
}

pub fn run_with(config: &ExperimentConfig, options: &RunOptions) -> Result<RunRecord> {
    config.validate()?;
    let (train, val) = load_data(config)?;
    let [channels, _, _] = train.image_shape();
    let spec = config.network_spec(channels, train.class_count);
    let network = Network::<f32>::build(&spec, config.seed)?;
    let sgd = Sgd::new(config.sgd_config(), network.parameters())?;
    let mut t = Trainer {
        config,
        train,
        val,
        network,
        sgd,
        schedule: config.schedule_spec()?,
        clip: config.clip_spec(),
        policy: AugmentPolicy::from_str(&config.data.augment)?,
        metrics: Vec::new(),
        gradients: Vec::new(),
        initial_loss: None,
        high_loss_streak: 0,
    };
    let mut start = 0;
    if let Some(dir) = &options.resume_from {
        let ckpt = load_checkpoint(dir)?;
        if ckpt.manifest.seed != config.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint seed {} differs from config seed {}",
                ckpt.manifest.seed, config.seed
            )));
        }
        ckpt.restore(&mut t.network, &mut t.sgd)?;
        start = ckpt.manifest.epochs_completed;
        t.metrics = ckpt.history.metrics;
        t.gradients = ckpt.history.gradients;
        t.initial_loss = ckpt.manifest.initial_loss;
        t.high_loss_streak = ckpt.manifest.high_loss_streak;
    }
    let out_dir = &config.output.dir;
    if !options.dry {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        diagnostics::write_file(&out_dir.join("config.toml"), &config.snapshot()?)?;
    }
    let end = options.stop_after.unwrap_or(config.epochs).min(config.epochs);
    let mut status = RunStatus::Completed;
    let mut failed_epoch = None;
    let mut message = None;
    for epoch in start..end {
        let (outcome, cost) = measure_epoch(|| t.train_epoch(epoch));
        let outcome = match outcome {
            Ok(o) => o,
            Err(e @ (Error::Io { .. } | Error::Config(_))) => return Err(e),
            Err(e) => {
                status = RunStatus::Error;
                failed_epoch = Some(epoch);
                message = Some(e.to_string());
                break;
            }
        };
        match outcome {
            EpochOutcome::Diverged(why) => {
                status = RunStatus::Diverged;
                failed_epoch = Some(epoch);
                message = Some(why);
                break;
            }
            EpochOutcome::Done(mut m) => {
                m.wall_seconds = cost.wall_seconds;
                m.peak_bytes = cost.peak_bytes;
                let initial = t.initial_loss.unwrap_or(f64::INFINITY);
                if m.train_loss > DIVERGENCE_FACTOR * initial {
                    t.high_loss_streak += 1;
                } else {
                    t.high_loss_streak = 0;
                }
                t.metrics.push(m);
                if t.high_loss_streak >= DIVERGENCE_PATIENCE {
                    status = RunStatus::Diverged;
                    failed_epoch = Some(epoch);
                    message = Some(format!(
                        "train loss above {DIVERGENCE_FACTOR}x its initial value for {DIVERGENCE_PATIENCE} epochs"
                    ));
                    break;
                }
                let every = config.output.checkpoint_every;
                if !options.dry && every > 0 && (epoch + 1) % every == 0 && epoch + 1 < end {
                    t.checkpoint(out_dir, epoch + 1)?;
                }
            }
        }
    }
    if !options.dry && status == RunStatus::Completed {
        t.checkpoint(out_dir, t.metrics.len())?;
    }
    let last = t.metrics.last();
    let record = RunRecord {
        config: config.clone(),
        status,
        failed_epoch,
        message,
        final_train_accuracy: last.map(|m| m.train_accuracy),
        final_val_accuracy: last.map(|m| m.val_accuracy),
        final_train_loss: last.map(|m| m.train_loss),
        final_val_loss: last.map(|m| m.val_loss),
        epochs: t.metrics,
        gradients: t.gradients,
    };
    if !options.dry {
        write_run_outputs(out_dir, &record)?;
    }
    Ok(record)
}

pub const RUN_RECORD_FILE: &str = "run.json";

fn write_run_outputs(dir: &Path, record: &RunRecord) -> Result<()> {
    let format = ExportFormat::from_str(&record.config.output.format)?;
    diagnostics::export(dir, &record.gradients, &record.epochs, format)?;
    diagnostics::write_file(
        &dir.join("report.svg"),
        &svg::run_report(&record.epochs, &record.gradients),
    )?;
    let mut json = serde_json::to_string_pretty(record)?;
    json.push('\n');
    diagnostics::write_file(&dir.join(RUN_RECORD_FILE), &json)
}

/// Read `run.json` from a finished run directory.
pub fn load_run_record(dir: &Path) -> Result<RunRecord> {
    let path = dir.join(RUN_RECORD_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            dir: dir.to_path_buf(),
            file: RUN_RECORD_FILE,
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
