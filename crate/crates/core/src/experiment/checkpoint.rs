//! End-of-epoch checkpoints: a key-value text manifest, one raw little-endian
//! `f32` blob per named tensor (parameters, momentum buffers, BN running
//! statistics), and the metric history so far.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{EpochMetrics, GradHistogramRecord};
use crate::error::{Error, Result};
use crate::layers::{Network, NetworkSpec};
use crate::optim::Sgd;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const HISTORY: &str = "history.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorGroup {
    Param,
    Velocity,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: TensorGroup,
    pub shape: Vec<usize>,
    /// Blob path relative to the checkpoint directory.
    pub file: String,
}

impl TensorGroup {
    fn dir(self) -> &'static str {
        match self {
            TensorGroup::Param => "params",
            TensorGroup::Velocity => "velocity",
            TensorGroup::Buffer => "buffers",
        }
    }
}

/// Metric and gradient history up to the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub metrics: Vec<EpochMetrics>,
    pub gradients: Vec<GradHistogramRecord>,
}

/// Everything needed to continue a run after `epochs_completed` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub epochs_completed: usize,
    pub seed: u64,
    pub prev_lr: Option<f64>,
    pub initial_loss: Option<f64>,
    pub high_loss_streak: usize,
    pub network: NetworkSpec,
    pub tensors: Vec<TensorEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub history: History,
    pub tensors: Vec<Tensor<f32>>,
}

impl Checkpoint {
    fn group(&self, group: TensorGroup) -> impl Iterator<Item = (&TensorEntry, &Tensor<f32>)> {
        self.manifest
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter(move |(e, _)| e.group == group)
    }

    /// Overwrite the network's parameters and buffers and the optimizer state.
    pub fn restore(&self, network: &mut Network<f32>, sgd: &mut Sgd<f32>) -> Result<()> {
        if network.spec() != &self.manifest.network {
            return Err(Error::Checkpoint("network spec differs from the checkpoint's".into()));
        }
        let mut seen = 0;
        for (entry, t) in self.group(TensorGroup::Param) {
            let id = network
                .parameters()
                .find(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", entry.name)))?;
            let p = network.parameters_mut().get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for `{}`", entry.name)));
            }
            p.value = t.clone();
            seen += 1;
        }
        if seen != network.parameters().len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {seen} parameters, network has {}",
                network.parameters().len()
            )));
        }
        for (entry, t) in self.group(TensorGroup::Buffer) {
            let b = network
                .buffer_mut(&entry.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown buffer `{}`", entry.name)))?;
            *b = t.clone();
        }
        let velocities: Vec<Tensor<f32>> = self.group(TensorGroup::Velocity).map(|(_, t)| t.clone()).collect();
        sgd.restore(velocities, self.manifest.prev_lr)?;
        network.check_weight_norms()
    }
}

pub struct CheckpointState<'a> {
    pub epochs_completed: usize,
    pub seed: u64,
    pub network: &'a Network<f32>,
    pub sgd: &'a Sgd<f32>,
    pub initial_loss: Option<f64>,
    pub high_loss_streak: usize,
    pub metrics: &'a [EpochMetrics],
    pub gradients: &'a [GradHistogramRecord],
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(dir: &Path, state: &CheckpointState) -> Result<PathBuf> {
    let mut entries = Vec::new();
    let mut save = |name: String, group: TensorGroup, t: &Tensor<f32>| -> Result<()> {
        let file = format!("{}/{name}.f32", group.dir());
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&dir.join(&file), &bytes)?;
        entries.push(TensorEntry {
            name,
            group,
            shape: t.shape().to_vec(),
            file,
        });
        Ok(())
    };
    let store = state.network.parameters();
    for (_, p) in store.iter() {
        save(p.name.clone(), TensorGroup::Param, &p.value)?;
    }
    for ((_, p), v) in store.iter().zip(state.sgd.velocities()) {
        save(p.name.clone(), TensorGroup::Velocity, v)?;
    }
    for (name, t) in state.network.buffers() {
        save(name, TensorGroup::Buffer, t)?;
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        epochs_completed: state.epochs_completed,
        seed: state.seed,
        prev_lr: state.sgd.prev_lr(),
        initial_loss: state.initial_loss,
        high_loss_streak: state.high_loss_streak,
        network: state.network.spec().clone(),
        tensors: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Checkpoint(format!("cannot write manifest: {e}")))?;
    write(&dir.join(MANIFEST), text.as_bytes())?;
    let history = History {
        metrics: state.metrics.to_vec(),
        gradients: state.gradients.to_vec(),
    };
    write(&dir.join(HISTORY), serde_json::to_string(&history)?.as_bytes())?;
    Ok(dir.to_path_buf())
}

fn read_blob(dir: &Path, entry: &TensorEntry) -> Result<Tensor<f32>> {
    if entry.file.split('/').any(|part| part == "..") {
        return Err(Error::Checkpoint(format!(
            "blob path `{}` leaves the checkpoint",
            entry.file
        )));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let len: usize = entry.shape.iter().product();
    if bytes.len() != 4 * len {
        return Err(Error::Checkpoint(format!(
            "{} holds {} bytes, shape {:?} needs {}",
            entry.file,
            bytes.len(),
            entry.shape,
            4 * len
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(&entry.shape, values)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.exists() {
        return Err(Error::Checkpoint(format!("{} has no {MANIFEST}", dir.display())));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    let tensors = manifest
        .tensors
        .iter()
        .map(|e| read_blob(dir, e))
        .collect::<Result<Vec<_>>>()?;
    let history_path = dir.join(HISTORY);
    let history_text = fs::read_to_string(&history_path).map_err(|e| Error::io(&history_path, e))?;
    Ok(Checkpoint {
        manifest,
        history: serde_json::from_str(&history_text)?,
        tensors,
    })
}
