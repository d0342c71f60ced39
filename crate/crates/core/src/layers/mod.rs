//! Network building blocks and the residual network assembler.

mod batchnorm;
mod block;
mod conv;
mod dropout;
mod linear;
mod network;
mod weightnorm;

pub use batchnorm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use block::{BasicBlock, BlockKind, BlockSpec};
pub use conv::Conv2d;
pub use dropout::dropout_forward;
pub use linear::Linear;
pub use network::{LayerInfo, Network, NetworkSpec};
pub use weightnorm::{effective_weight, WeightNormConv2d, WeightNormParam};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass state: mode and the seed stream for dropout masks.
#[derive(Clone, Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    seed: u64,
    draws: u64,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        Self {
            mode: Mode::Train,
            seed,
            draws: 0,
        }
    }

    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            seed: 0,
            draws: 0,
        }
    }

    /// Seed for the next stochastic layer in this pass.
    pub(crate) fn next_seed(&mut self) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.draws);
        self.draws += 1;
        rand::Rng::random(&mut rng)
    }
}

/// Kaiming fan-in normal standard deviation for ReLU networks.
pub(crate) fn kaiming_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
