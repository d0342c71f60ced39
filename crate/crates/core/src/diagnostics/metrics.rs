use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{memory, Element, Tensor};

/// Percentage of rows of `logits` whose arg-max equals the label. Ties go to
/// the lowest class index.
pub fn top1_accuracy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let &[n, classes] = logits.shape() else {
        return Err(Error::InvalidShape {
            op: "top1_accuracy",
            reason: format!("expected [N, C] logits, got {:?}", logits.shape()),
        });
    };
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let correct = logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(100.0 * correct as f64 / n as f64)
}

fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Everything logged about one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub clip_threshold: Option<f64>,
    /// Steps in which clipping rescaled the gradients.
    pub clip_events: usize,
    pub wall_seconds: f64,
    pub peak_bytes: usize,
}

/// Wall time and tensor-memory high-water mark of a measured section.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochCost {
    pub wall_seconds: f64,
    /// Live tensor bytes when the section started.
    pub baseline_bytes: usize,
    /// Highest live tensor byte count reached during the section.
    pub peak_bytes: usize,
}

impl EpochCost {
    pub fn peak_above_baseline(&self) -> usize {
        self.peak_bytes.saturating_sub(self.baseline_bytes)
    }
}

/// Run `epoch` and report its duration and the peak of live tensor bytes on
/// this thread while it ran.
pub fn measure_epoch<R>(epoch: impl FnOnce() -> R) -> (R, EpochCost) {
    memory::reset_peak();
    let baseline_bytes = memory::live_bytes();
    let start = Instant::now();
    let out = epoch();
    let cost = EpochCost {
        wall_seconds: start.elapsed().as_secs_f64(),
        baseline_bytes,
        peak_bytes: memory::peak_bytes(),
    };
    (out, cost)
}
