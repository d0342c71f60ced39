use rand::Rng;

use super::kaiming_std;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{ChannelOp, Element, ParamId, Tape, Tensor, Var};

/// Direction `v: [Cout, Cin, kh, kw]` and per-output-channel magnitude `g: [Cout]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightNormParam<T: Element> {
    pub v: Tensor<T>,
    pub g: Tensor<T>,
}

impl<T: Element> WeightNormParam<T> {
    pub fn new(v: Tensor<T>, g: Tensor<T>) -> Result<Self> {
        if v.ndim() < 1 || g.ndim() != 1 || v.shape()[0] != g.numel() {
            return Err(Error::ShapeMismatch {
                op: "weight_norm",
                left: v.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        check_direction_norms(&v)?;
        Ok(Self { v, g })
    }

    /// Kaiming-initialized direction with `g = ||v_c||`, so the initial effective weight equals `v`.
    pub fn init<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Self> {
        let fan_in: usize = shape[1..].iter().product();
        let v = Tensor::<T>::randn(shape, kaiming_std(fan_in), rng);
        let g = Tensor::new(&[shape[0]], channel_norms(&v))?;
        Self::new(v, g)
    }

    pub fn effective_weight(&self) -> Result<Tensor<T>> {
        effective_weight(&self.v, &self.g)
    }
}

pub(crate) fn channel_norms<T: Element>(v: &Tensor<T>) -> Vec<T> {
    let per = v.numel() / v.shape()[0];
    v.data()
        .chunks(per)
        .map(|c| c.iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect()
}

/// Rejects a direction tensor with any zero-norm output channel.
pub(crate) fn check_direction_norms<T: Element>(v: &Tensor<T>) -> Result<()> {
    match channel_norms(v).iter().position(|&n| !(n > T::zero())) {
        Some(c) => Err(Error::InvalidArgument(format!(
            "weight-norm direction for output channel {c} has zero norm"
        ))),
        None => Ok(()),
    }
}

/// `w_c = (g_c / ||v_c||) · v_c` for each output channel `c`.
pub fn effective_weight<T: Element>(v: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vv = tape.constant(v.clone());
    let gv = tape.constant(g.clone());
    let w = tape.weight_norm(vv, gv)?;
    Ok(tape.value(w).clone())
}

/// Convolution whose kernel is the weight-normalized `(v, g)` pair, plus a bias.
#[derive(Clone, Debug)]
pub struct WeightNormConv2d {
    pub name: String,
    pub v: ParamId,
    pub g: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl WeightNormConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let p = WeightNormParam::<T>::init(&[out_channels, in_channels, kernel, kernel], rng)?;
        Ok(Self {
            name: name.to_string(),
            v: store.add(format!("{name}.v"), p.v),
            g: store.add(format!("{name}.g"), p.g),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
            stride,
            padding,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.v, self.g, self.bias]
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let v = tape.param(self.v, store.value(self.v));
        let g = tape.param(self.g, store.value(self.g));
        let w = tape.weight_norm(v, g)?;
        let y = tape.conv2d(x, w, self.stride, self.padding)?;
        let b = tape.param(self.bias, store.value(self.bias));
        tape.channel(ChannelOp::Add, y, b)
    }

    pub fn check_direction<T: Element>(&self, store: &ParamStore<T>) -> Result<()> {
        check_direction_norms(store.value(self.v)).map_err(|e| Error::InvalidArgument(format!("{}: {e}", self.name)))
    }
}
