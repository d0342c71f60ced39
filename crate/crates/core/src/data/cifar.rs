use std::path::PathBuf;

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3 * 32 * 32;
const CLASSES: usize = 10;

/// Parse CIFAR-10 binary batches: each record is one label byte followed by
/// the R, G and B 32×32 planes. Pixels are scaled to `[0, 1]`.
pub fn load_cifar_binary(paths: &[PathBuf]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.is_empty() || bytes.len() % RECORD != 0 {
            return Err(Error::Format {
                format: "CIFAR-10",
                reason: format!(
                    "{}: length {} is not a positive multiple of {RECORD}",
                    path.display(),
                    bytes.len()
                ),
            });
        }
        for record in bytes.chunks(RECORD) {
            let label = record[0] as usize;
            if label >= CLASSES {
                return Err(Error::Format {
                    format: "CIFAR-10",
                    reason: format!("{}: label {label} out of range", path.display()),
                });
            }
            labels.push(label);
            pixels.extend(record[1..].iter().map(|&p| p as f32 / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no CIFAR files given".into()));
    }
    let images = Tensor::new(&[labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, CLASSES)
}
