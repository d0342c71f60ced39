use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dropout_forward, BatchNorm2d, Conv2d, ForwardCtx, WeightNormConv2d};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, ParamId, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// conv3×3 → BN → ReLU → conv3×3 → BN, shortcut, ReLU.
    OriginalBn,
    /// wn-conv3×3 → ReLU → dropout → wn-conv3×3, shortcut, ReLU.
    ModifiedWeightnorm,
    /// conv3×3 → ReLU → conv3×3, shortcut, ReLU; no normalization at all.
    Plain,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::OriginalBn => "original_bn",
            BlockKind::ModifiedWeightnorm => "modified_weightnorm",
            BlockKind::Plain => "plain",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original_bn" => Ok(BlockKind::OriginalBn),
            "modified_weightnorm" => Ok(BlockKind::ModifiedWeightnorm),
            "plain" => Ok(BlockKind::Plain),
            other => Err(Error::Config(format!("unknown block kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub dropout_p: f64,
}

impl BlockSpec {
    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("block channels must be positive".into()));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::InvalidArgument(format!(
                "block stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.kind != BlockKind::ModifiedWeightnorm && self.dropout_p != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "dropout is only part of the modified block, not {}",
                self.kind
            )));
        }
        Ok(())
    }
}

// A network holds a handful of blocks, so boxing the BN variant buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug)]
enum Body<T: Element> {
    Original {
        conv1: Conv2d,
        bn1: BatchNorm2d<T>,
        conv2: Conv2d,
        bn2: BatchNorm2d<T>,
        shortcut: Option<(Conv2d, BatchNorm2d<T>)>,
    },
    Modified {
        conv1: WeightNormConv2d,
        conv2: WeightNormConv2d,
        shortcut: Option<WeightNormConv2d>,
    },
    Plain {
        conv1: Conv2d,
        conv2: Conv2d,
        shortcut: Option<Conv2d>,
    },
}

/// Two-convolution residual unit in one of the three [`BlockKind`] variants.
#[derive(Clone, Debug)]
pub struct BasicBlock<T: Element> {
    pub name: String,
    pub spec: BlockSpec,
    body: Body<T>,
}

impl<T: Element> BasicBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: BlockSpec,
        bn_eps: f64,
        bn_momentum: f64,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let (cin, cout, s) = (spec.in_channels, spec.out_channels, spec.stride);
        let n = |suffix: &str| format!("{name}.{suffix}");
        let body = match spec.kind {
            BlockKind::OriginalBn => {
                let conv1 = Conv2d::new(store, &n("conv1"), cin, cout, 3, s, 1, false, rng);
                let bn1 = BatchNorm2d::new(store, &n("bn1"), cout, bn_eps, bn_momentum)?;
                let conv2 = Conv2d::new(store, &n("conv2"), cout, cout, 3, 1, 1, false, rng);
                let bn2 = BatchNorm2d::new(store, &n("bn2"), cout, bn_eps, bn_momentum)?;
                let shortcut = if spec.needs_projection() {
                    let conv = Conv2d::new(store, &n("shortcut"), cin, cout, 1, s, 0, false, rng);
                    let bn = BatchNorm2d::new(store, &n("shortcut_bn"), cout, bn_eps, bn_momentum)?;
                    Some((conv, bn))
                } else {
                    None
                };
                Body::Original {
                    conv1,
                    bn1,
                    conv2,
                    bn2,
                    shortcut,
                }
            }
            BlockKind::ModifiedWeightnorm => {
                let conv1 = WeightNormConv2d::new(store, &n("conv1"), cin, cout, 3, s, 1, rng)?;
                let conv2 = WeightNormConv2d::new(store, &n("conv2"), cout, cout, 3, 1, 1, rng)?;
                let shortcut = if spec.needs_projection() {
                    Some(WeightNormConv2d::new(store, &n("shortcut"), cin, cout, 1, s, 0, rng)?)
                } else {
                    None
                };
                Body::Modified { conv1, conv2, shortcut }
            }
            BlockKind::Plain => {
                let conv1 = Conv2d::new(store, &n("conv1"), cin, cout, 3, s, 1, true, rng);
                let conv2 = Conv2d::new(store, &n("conv2"), cout, cout, 3, 1, 1, true, rng);
                let shortcut = spec
                    .needs_projection()
                    .then(|| Conv2d::new(store, &n("shortcut"), cin, cout, 1, s, 0, true, rng));
                Body::Plain { conv1, conv2, shortcut }
            }
        };
        Ok(Self {
            name: name.to_string(),
            spec,
            body,
        })
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "basic_block",
                left: shape.to_vec(),
                right: vec![self.spec.in_channels],
            });
        }
        let (residual, shortcut) = match &mut self.body {
            Body::Original {
                conv1,
                bn1,
                conv2,
                bn2,
                shortcut,
            } => {
                let h = conv1.forward(tape, store, x)?;
                let h = bn1.forward(tape, store, h, ctx.mode)?;
                let h = tape.relu(h)?;
                let h = conv2.forward(tape, store, h)?;
                let h = bn2.forward(tape, store, h, ctx.mode)?;
                let sc = match shortcut {
                    Some((conv, bn)) => {
                        let s = conv.forward(tape, store, x)?;
                        bn.forward(tape, store, s, ctx.mode)?
                    }
                    None => x,
                };
                (h, sc)
            }
            Body::Modified { conv1, conv2, shortcut } => {
                let h = conv1.forward(tape, store, x)?;
                let h = tape.relu(h)?;
                let seed = ctx.next_seed();
                let h = dropout_forward(tape, h, self.spec.dropout_p, ctx.mode, seed)?;
                let h = conv2.forward(tape, store, h)?;
                let sc = match shortcut {
                    Some(conv) => conv.forward(tape, store, x)?,
                    None => x,
                };
                (h, sc)
            }
            Body::Plain { conv1, conv2, shortcut } => {
                let h = conv1.forward(tape, store, x)?;
                let h = tape.relu(h)?;
                let h = conv2.forward(tape, store, h)?;
                let sc = match shortcut {
                    Some(conv) => conv.forward(tape, store, x)?,
                    None => x,
                };
                (h, sc)
            }
        };
        let sum = tape.add(residual, shortcut)?;
        tape.relu(sum)
    }

    /// `(layer name, parameter ids)` in forward order.
    pub fn layers(&self) -> Vec<(String, Vec<ParamId>)> {
        match &self.body {
            Body::Original {
                conv1,
                bn1,
                conv2,
                bn2,
                shortcut,
            } => {
                let mut out = vec![
                    (conv1.name.clone(), conv1.params()),
                    (bn1.name.clone(), bn1.params()),
                    (conv2.name.clone(), conv2.params()),
                    (bn2.name.clone(), bn2.params()),
                ];
                if let Some((conv, bn)) = shortcut {
                    out.push((conv.name.clone(), conv.params()));
                    out.push((bn.name.clone(), bn.params()));
                }
                out
            }
            Body::Modified { conv1, conv2, shortcut } => std::iter::once(conv1)
                .chain(std::iter::once(conv2))
                .chain(shortcut.iter())
                .map(|c| (c.name.clone(), c.params()))
                .collect(),
            Body::Plain { conv1, conv2, shortcut } => std::iter::once(conv1)
                .chain(std::iter::once(conv2))
                .chain(shortcut.iter())
                .map(|c| (c.name.clone(), c.params()))
                .collect(),
        }
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        match &self.body {
            Body::Original { bn1, bn2, shortcut, .. } => {
                let mut v = vec![bn1, bn2];
                if let Some((_, bn)) = shortcut {
                    v.push(bn);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        match &mut self.body {
            Body::Original { bn1, bn2, shortcut, .. } => {
                let mut v = vec![bn1, bn2];
                if let Some((_, bn)) = shortcut {
                    v.push(bn);
                }
                v
            }
            _ => Vec::new(),
        }
    }

    pub fn weight_norm_convs(&self) -> Vec<&WeightNormConv2d> {
        match &self.body {
            Body::Modified { conv1, conv2, shortcut } => std::iter::once(conv1)
                .chain(std::iter::once(conv2))
                .chain(shortcut.iter())
                .collect(),
            _ => Vec::new(),
        }
    }
}
