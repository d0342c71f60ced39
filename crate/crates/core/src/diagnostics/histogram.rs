use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Network;
use crate::tensor::Element;

pub const BIN_COUNT: usize = 64;
/// Lower edge of the first bin; magnitudes below it (including exact zeros) underflow.
pub const MIN_MAGNITUDE: f64 = 1e-12;
/// Upper edge of the last bin; magnitudes at or above it overflow.
pub const MAX_MAGNITUDE: f64 = 1e2;

/// The `BIN_COUNT + 1` log-spaced bin edges over `[MIN_MAGNITUDE, MAX_MAGNITUDE]`.
pub fn bin_edges() -> Vec<f64> {
    let (lo, hi) = (MIN_MAGNITUDE.log10(), MAX_MAGNITUDE.log10());
    (0..=BIN_COUNT)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / BIN_COUNT as f64))
        .collect()
}

/// Running count, mean and second/third central moment sums, mergeable across
/// samples without revisiting the data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub m3: f64,
    pub max: f64,
}

impl Moments {
    /// Two-pass central moments of `values`.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let (mut m2, mut m3) = (0.0, 0.0);
        for &v in values {
            let d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        Self {
            count: values.len() as u64,
            mean,
            m2,
            m3,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Moments of the union of both samples.
    pub fn merge(&self, other: &Self) -> Self {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = other.mean - self.mean;
        Self {
            count: self.count + other.count,
            mean: self.mean + delta * nb / n,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n,
            m3: self.m3
                + other.m3
                + delta.powi(3) * na * nb * (na - nb) / (n * n)
                + 3.0 * delta * (na * other.m2 - nb * self.m2) / n,
            max: self.max.max(other.max),
        }
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.m2 / self.count as f64).max(0.0).sqrt()
    }

    /// Biased Fisher–Pearson skewness `m3 / m2^(3/2)`; zero for a constant sample.
    pub fn skew(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let var = self.m2 / n;
        // A spread this small relative to the mean is rounding noise.
        if !(var > (f64::EPSILON * self.mean.abs()).powi(2)) {
            return 0.0;
        }
        (self.m3 / n) / var.powf(1.5)
    }
}

/// Histogram and summary statistics of one layer's gradient magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradHistogramRecord {
    pub layer: String,
    pub epoch: usize,
    pub phase: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
    pub moments: Moments,
}

impl GradHistogramRecord {
    /// Histogram of `|g|` over `grads`.
    pub fn from_values(layer: &str, epoch: usize, phase: &str, grads: &[f64]) -> Self {
        let edges = bin_edges();
        let mut counts = vec![0u64; BIN_COUNT];
        let (mut underflow, mut overflow) = (0, 0);
        let magnitudes: Vec<f64> = grads.iter().map(|g| g.abs()).collect();
        for &m in &magnitudes {
            match bin_of(&edges, m) {
                Bin::Under => underflow += 1,
                Bin::Over => overflow += 1,
                Bin::At(i) => counts[i] += 1,
            }
        }
        Self {
            layer: layer.to_string(),
            epoch,
            phase: phase.to_string(),
            edges,
            counts,
            underflow,
            overflow,
            moments: Moments::of(&magnitudes),
        }
    }

    /// Fold another observation of the same layer (e.g. a later step) into this one.
    pub fn merge(&mut self, other: &GradHistogramRecord) -> Result<()> {
        if other.layer != self.layer || other.edges != self.edges {
            return Err(Error::InvalidArgument(format!(
                "cannot merge histogram of `{}` into `{}`",
                other.layer, self.layer
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
        self.moments = self.moments.merge(&other.moments);
        Ok(())
    }

    /// Number of gradient elements observed.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn mean(&self) -> f64 {
        self.moments.mean
    }

    pub fn std(&self) -> f64 {
        self.moments.std()
    }

    pub fn skew(&self) -> f64 {
        self.moments.skew()
    }

    pub fn max(&self) -> f64 {
        if self.moments.count == 0 {
            0.0
        } else {
            self.moments.max
        }
    }
}

enum Bin {
    Under,
    Over,
    At(usize),
}

fn bin_of(edges: &[f64], m: f64) -> Bin {
    if !(m >= edges[0]) {
        return Bin::Under;
    }
    if m >= edges[BIN_COUNT] {
        return Bin::Over;
    }
    let (lo, hi) = (edges[0].log10(), edges[BIN_COUNT].log10());
    let mut i = (((m.log10() - lo) / (hi - lo)) * BIN_COUNT as f64) as usize;
    i = i.min(BIN_COUNT - 1);
    // The logarithm can land one bin off near an edge; settle against the edges themselves.
    while i > 0 && m < edges[i] {
        i -= 1;
    }
    while i + 1 < BIN_COUNT && m >= edges[i + 1] {
        i += 1;
    }
    Bin::At(i)
}

/// One record per named layer from the gradients currently held by `network`.
/// Reads only; the gradients are left untouched.
pub fn record_gradients<T: Element>(network: &Network<T>, epoch: usize) -> Result<Vec<GradHistogramRecord>> {
    record_gradients_with_phase(network, epoch, "train")
}

pub fn record_gradients_with_phase<T: Element>(
    network: &Network<T>,
    epoch: usize,
    phase: &str,
) -> Result<Vec<GradHistogramRecord>> {
    let store = network.parameters();
    if !store.has_grads() {
        return Err(Error::EmptyGradients);
    }
    Ok(network
        .named_layers()
        .into_iter()
        .map(|layer| {
            let grads: Vec<f64> = layer
                .params
                .iter()
                .flat_map(|&id| store.get(id).grad.data().iter().map(|g| g.as_f64()))
                .collect();
            GradHistogramRecord::from_values(&layer.name, epoch, phase, &grads)
        })
        .collect())
}
