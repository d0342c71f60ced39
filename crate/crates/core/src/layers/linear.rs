use rand::Rng;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{ChannelOp, Element, ParamId, Tape, Tensor, Var};

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let std = (1.0 / inputs as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::randn(&[inputs, outputs], std, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Self {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight, store.value(self.weight));
        let b = tape.param(self.bias, store.value(self.bias));
        let y = tape.matmul(x, w)?;
        tape.channel(ChannelOp::Add, y, b)
    }
}
