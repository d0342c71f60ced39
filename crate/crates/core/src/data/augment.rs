use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentPolicy {
    None,
    /// Zero-pad by 4, random crop back to the original size, random horizontal flip.
    Pad4CropFlip,
}

impl AugmentPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentPolicy::None => "none",
            AugmentPolicy::Pad4CropFlip => "pad4_random_crop_flip",
        }
    }
}

impl fmt::Display for AugmentPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentPolicy::None),
            "pad4_random_crop_flip" => Ok(AugmentPolicy::Pad4CropFlip),
            other => Err(Error::Config(format!("unknown augmentation policy `{other}`"))),
        }
    }
}

const PAD: usize = 4;

/// Mirror the images selected by `mask` left-to-right.
pub fn hflip(images: &Tensor<f32>, mask: &[bool]) -> Result<Tensor<f32>> {
    let &[n, c, h, w] = images.shape() else {
        return Err(Error::InvalidShape {
            op: "hflip",
            reason: format!("expected [N, C, H, W], got {:?}", images.shape()),
        });
    };
    if mask.len() != n {
        return Err(Error::InvalidArgument(format!(
            "flip mask of {} for {n} images",
            mask.len()
        )));
    }
    let mut out = images.data().to_vec();
    for (sample, &flip) in out.chunks_mut(c * h * w).zip(mask) {
        if flip {
            sample.chunks_mut(w).for_each(<[f32]>::reverse);
        }
    }
    Tensor::new(images.shape(), out)
}

/// Label-preserving train-time augmentation, deterministic in `seed`.
pub fn augment(images: &Tensor<f32>, policy: AugmentPolicy, seed: u64) -> Result<Tensor<f32>> {
    if policy == AugmentPolicy::None {
        return Ok(images.clone());
    }
    let &[n, c, h, w] = images.shape() else {
        return Err(Error::InvalidShape {
            op: "augment",
            reason: format!("expected [N, C, H, W], got {:?}", images.shape()),
        });
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0f32; images.numel()];
    let mut flips = Vec::with_capacity(n);
    for (src, dst) in images.data().chunks(c * h * w).zip(out.chunks_mut(c * h * w)) {
        let dy = rng.random_range(0..=2 * PAD) as isize - PAD as isize;
        let dx = rng.random_range(0..=2 * PAD) as isize - PAD as isize;
        flips.push(rng.random_bool(0.5));
        for ch in 0..c {
            for y in 0..h {
                let sy = y as isize + dy;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let sx = x as isize + dx;
                    if sx >= 0 && sx < w as isize {
                        dst[(ch * h + y) * w + x] = src[(ch * h + sy as usize) * w + sx as usize];
                    }
                }
            }
        }
    }
    hflip(&Tensor::new(images.shape(), out)?, &flips)
}
