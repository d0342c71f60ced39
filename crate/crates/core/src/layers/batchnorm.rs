use super::Mode;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{ChannelOp, Element, ParamId, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[N, C, H, W]` activations.
///
/// Train mode normalizes with the batch mean and biased batch variance and
/// folds them into the running statistics as an exponential moving average
/// (the running variance uses the unbiased batch estimate). Eval mode uses the
/// running statistics and leaves them untouched.
#[derive(Clone, Debug)]
pub struct BatchNorm2d<T: Element> {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, channels: usize, eps: f64, momentum: f64) -> Result<Self> {
        if !(eps > 0.0) || !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "batch norm needs eps > 0 and momentum in (0,1), got eps={eps} momentum={momentum}"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps,
            momentum,
        })
    }

    pub fn channels(&self) -> usize {
        self.running_mean.numel()
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }

    /// Normalized activations before the affine transform.
    fn normalize(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: shape,
                right: vec![self.channels()],
            });
        }
        match mode {
            Mode::Train => {
                let count = shape[0] * shape[2] * shape[3];
                if count < 2 {
                    return Err(Error::InvalidShape {
                        op: "batch_norm",
                        reason: "train mode needs at least two values per channel".into(),
                    });
                }
                let (mean, var) = tape.reduce_stats(x, &[0, 2, 3])?;
                let centered = tape.channel(ChannelOp::Sub, x, mean)?;
                let shifted = tape.add_scalar(var, T::of(self.eps))?;
                let inv_std = tape.rsqrt(shifted)?;
                let xhat = tape.channel(ChannelOp::Mul, centered, inv_std)?;

                let m = T::of(self.momentum);
                let keep = T::one() - m;
                let unbias = T::of(count as f64 / (count - 1) as f64);
                let batch_mean = tape.value(mean).data().to_vec();
                let batch_var = tape.value(var).data().to_vec();
                for (r, b) in self.running_mean.data_mut().iter_mut().zip(batch_mean) {
                    *r = keep * *r + m * b;
                }
                for (r, b) in self.running_var.data_mut().iter_mut().zip(batch_var) {
                    *r = keep * *r + m * b * unbias;
                }
                Ok(xhat)
            }
            Mode::Eval => {
                let mean = tape.constant(self.running_mean.clone());
                let eps = T::of(self.eps);
                let inv_std = tape.constant(self.running_var.map(|v| (v + eps).sqrt().recip()));
                let centered = tape.channel(ChannelOp::Sub, x, mean)?;
                tape.channel(ChannelOp::Mul, centered, inv_std)
            }
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let xhat = self.normalize(tape, x, mode)?;
        let gamma = tape.param(self.gamma, store.value(self.gamma));
        let beta = tape.param(self.beta, store.value(self.beta));
        let scaled = tape.channel(ChannelOp::Mul, xhat, gamma)?;
        tape.channel(ChannelOp::Add, scaled, beta)
    }

    /// Train-mode normalized output without the affine step; exposed for invariant checks.
    pub fn forward_pre_affine(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.normalize(tape, x, Mode::Train)
    }
}
