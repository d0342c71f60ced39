//! Dataset loaders, dataset-statistics normalization, augmentation and
//! seeded mini-batch iteration.

mod augment;
mod cifar;
mod idx;
mod synthetic;

pub use augment::{augment, hflip, AugmentPolicy};
pub use cifar::load_cifar_binary;
pub use idx::load_idx;
pub use synthetic::{synthetic_dataset, SyntheticSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation used to standardize inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Images `[N, C, H, W]` with pixel values in `[0, 1]` (or standardized), plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub stats: Option<ChannelStats>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::InvalidShape {
                op: "dataset",
                reason: format!("images must be [N, C, H, W], got {:?}", images.shape()),
            });
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    /// Images and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let per = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.image_shape();
        Ok((Tensor::new(&[indices.len(), c, h, w], data)?, labels))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (images, labels) = self.gather(indices)?;
        Ok(Dataset {
            images,
            labels,
            class_count: self.class_count,
            stats: self.stats.clone(),
        })
    }

    /// Deterministic `(train, validation)` split by seeded permutation.
    pub fn split(&self, validation_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "validation fraction must lie in (0, 1), got {validation_fraction}"
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = ((self.len() as f64) * validation_fraction).round() as usize;
        if n_val == 0 || n_val == self.len() {
            return Err(Error::InvalidArgument(format!(
                "split of {} samples leaves an empty side",
                self.len()
            )));
        }
        let (val, train) = order.split_at(n_val);
        Ok((self.subset(train)?, self.subset(val)?))
    }
}

/// Per-channel mean and population standard deviation over the whole set.
pub fn channel_stats(ds: &Dataset) -> Result<ChannelStats> {
    let [c, h, w] = ds.image_shape();
    let plane = h * w;
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for (i, chunk) in ds.images.data().chunks(plane).enumerate() {
        let ch = i % c;
        for &v in chunk {
            let v = v as f64;
            sum[ch] += v;
            sq[ch] += v * v;
        }
    }
    let count = (ds.len() * plane) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut std = Vec::with_capacity(c);
    for ch in 0..c {
        let var = (sq[ch] / count - mean[ch] * mean[ch]).max(0.0);
        let s = var.sqrt();
        if !(s > 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "channel {ch} is constant; cannot standardize"
            )));
        }
        std.push(s);
    }
    Ok(ChannelStats { mean, std })
}

/// Apply previously computed statistics (e.g. training-set stats to a validation split).
pub fn apply_normalization(ds: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    let [c, h, w] = ds.image_shape();
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::InvalidArgument(format!(
            "statistics for {} channels applied to {c}-channel images",
            stats.mean.len()
        )));
    }
    let plane = h * w;
    let mut data = ds.images.data().to_vec();
    for (i, chunk) in data.chunks_mut(plane).enumerate() {
        let ch = i % c;
        let (m, s) = (stats.mean[ch], stats.std[ch]);
        for v in chunk {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    Ok(Dataset {
        images: Tensor::new(ds.images.shape(), data)?,
        labels: ds.labels.clone(),
        class_count: ds.class_count,
        stats: Some(stats.clone()),
    })
}

/// Standardize every channel to zero mean and unit variance over the whole set.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    let stats = channel_stats(ds)?;
    apply_normalization(ds, &stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub drop_last: bool,
    pub epoch: u64,
}

/// Sample indices for each batch: a `(seed, epoch)`-determined permutation cut into chunks.
pub fn batch_indices(n: usize, plan: &BatchPlan) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(plan.epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order
        .chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// One mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

/// Batches of `ds` in the order fixed by `plan`.
pub fn batches<'a>(ds: &'a Dataset, plan: &BatchPlan) -> Result<impl Iterator<Item = Result<Batch>> + 'a> {
    let chunks = batch_indices(ds.len(), plan)?;
    Ok(chunks.into_iter().map(move |idx| {
        let (images, labels) = ds.gather(&idx)?;
        Ok(Batch { images, labels })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let data: Vec<f32> = (0..n * 2 * 2 * 2).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
        Dataset::new(
            Tensor::new(&[n, 2, 2, 2], data).unwrap(),
            (0..n).map(|i| i % 3).collect(),
            3,
        )
        .unwrap()
    }

    #[test]
    fn batch_sizes_keep_partial() {
        let plan = BatchPlan {
            batch_size: 3,
            seed: 1,
            drop_last: false,
            epoch: 0,
        };
        let sizes: Vec<usize> = batch_indices(10, &plan).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let dropped = batch_indices(
            10,
            &BatchPlan {
                drop_last: true,
                ..plan
            },
        )
        .unwrap();
        assert_eq!(dropped.len(), 3);
    }

    #[test]
    fn order_depends_on_seed_and_epoch_only() {
        let plan = BatchPlan {
            batch_size: 4,
            seed: 9,
            drop_last: false,
            epoch: 2,
        };
        assert_eq!(batch_indices(50, &plan).unwrap(), batch_indices(50, &plan).unwrap());
        assert_ne!(
            batch_indices(50, &plan).unwrap(),
            batch_indices(50, &BatchPlan { epoch: 3, ..plan }).unwrap()
        );
    }

    #[test]
    fn normalization_moments() {
        let ds = normalize(&toy(20)).unwrap();
        let s = channel_stats(&ds).unwrap();
        for c in 0..2 {
            assert!(s.mean[c].abs() <= 1e-5);
            assert!((s.std[c] - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn stored_stats_reproduce_transform() {
        let raw = toy(12);
        let normed = normalize(&raw).unwrap();
        let again = apply_normalization(&raw, normed.stats.as_ref().unwrap()).unwrap();
        assert_eq!(again, normed);
    }

    #[test]
    fn constant_channel_rejected() {
        let ds = Dataset::new(Tensor::full(&[3, 1, 2, 2], 0.5), vec![0, 1, 0], 2).unwrap();
        assert!(normalize(&ds).is_err());
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let ds = toy(10);
        let (train, val) = ds.split(0.2, 4).unwrap();
        assert_eq!((train.len(), val.len()), (8, 2));
        assert_eq!(ds.split(0.2, 4).unwrap().0, train);
    }

    #[test]
    fn label_range_checked() {
        assert!(Dataset::new(Tensor::zeros(&[2, 1, 1, 1]), vec![0, 3], 3).is_err());
        assert!(Dataset::new(Tensor::zeros(&[2, 1, 1, 1]), vec![0], 3).is_err());
    }
}
