use rand::Rng;

use super::kaiming_std;
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{ChannelOp, Element, ParamId, Tape, Tensor, Var};

/// Plain convolution with an optional per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = kaiming_std(in_channels * kernel * kernel);
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::randn(&[out_channels, in_channels, kernel, kernel], std, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Self {
            name: name.to_string(),
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight, store.value(self.weight));
        let y = tape.conv2d(x, w, self.stride, self.padding)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b, store.value(b));
                tape.channel(ChannelOp::Add, y, b)
            }
            None => Ok(y),
        }
    }
}
