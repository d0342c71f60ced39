use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian blobs around one smooth random prototype image per class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Per-pixel noise standard deviation relative to the prototype scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            samples: 3000,
            channels: 3,
            height: 16,
            width: 16,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Side of the coarse grid each prototype is drawn on before nearest-neighbour upsampling.
const GRID: usize = 4;
/// Maps prototype-plus-noise values into pixel range around 0.5.
const PIXEL_SCALE: f64 = 0.1;

pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        classes,
        samples,
        channels,
        height,
        width,
        noise,
        seed,
    } = *spec;
    if classes < 2 || samples < classes || channels == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "invalid synthetic dataset spec {spec:?}"
        )));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let image_len = channels * height * width;
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let coarse: Vec<f64> = (0..channels * GRID * GRID).map(|_| gauss(&mut rng)).collect();
            let mut img = Vec::with_capacity(image_len);
            for c in 0..channels {
                for y in 0..height {
                    for x in 0..width {
                        let gy = y * GRID / height;
                        let gx = x * GRID / width;
                        img.push(coarse[(c * GRID + gy) * GRID + gx]);
                    }
                }
            }
            img
        })
        .collect();

    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut pixels = Vec::with_capacity(samples * image_len);
    for &label in &labels {
        for &p in &prototypes[label] {
            let v = 0.5 + PIXEL_SCALE * (p + noise * gauss(&mut rng));
            pixels.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    let images = Tensor::new(&[samples, channels, height, width], pixels)?;
    Dataset::new(images, labels, classes)
}
