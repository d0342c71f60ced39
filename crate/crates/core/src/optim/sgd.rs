use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescale the velocity by `lr_t / lr_{t-1}` whenever the rate changes.
    pub momentum_correction: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
            momentum_correction: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Momentum SGD:
///
/// ```text
/// g' = grad + λ·p
/// v  = m·c·v + g'      c = lr_t / lr_{t-1} with correction, else 1
/// p  = p − lr_t·v
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T: Element> {
    pub config: SgdConfig,
    velocities: Vec<Tensor<T>>,
    prev_lr: Option<f64>,
}

impl<T: Element> Sgd<T> {
    pub fn new(config: SgdConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let velocities = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Ok(Self {
            config,
            velocities,
            prev_lr: None,
        })
    }

    pub fn prev_lr(&self) -> Option<f64> {
        self.prev_lr
    }

    pub fn velocities(&self) -> &[Tensor<T>] {
        &self.velocities
    }

    /// Restore optimizer state from a checkpoint.
    pub fn restore(&mut self, velocities: Vec<Tensor<T>>, prev_lr: Option<f64>) -> Result<()> {
        if velocities.len() != self.velocities.len()
            || velocities
                .iter()
                .zip(&self.velocities)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("velocity buffers do not match the parameters".into()));
        }
        self.velocities = velocities;
        self.prev_lr = prev_lr;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if params.len() != self.velocities.len() {
            return Err(Error::InvalidArgument(
                "optimizer was built for a different parameter set".into(),
            ));
        }
        for (_, p) in params.iter() {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of {}", p.name),
                });
            }
        }
        let correction = match (self.config.momentum_correction, self.prev_lr) {
            (true, Some(prev)) => lr / prev,
            _ => 1.0,
        };
        let decay = T::of(self.config.weight_decay);
        let carry = T::of(self.config.momentum * correction);
        let rate = T::of(lr);
        for (p, v) in params.iter_mut().zip(&mut self.velocities) {
            let values = p.value.data_mut();
            for ((w, vel), &g) in values.iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
                let effective = g + decay * *w;
                *vel = carry * *vel + effective;
                *w = *w - rate * *vel;
            }
        }
        self.prev_lr = Some(lr);
        Ok(())
    }
}

/// Reset every accumulated gradient to zero.
pub fn zero_grads<T: Element>(params: &mut ParamStore<T>) {
    params.zero_grads();
}
