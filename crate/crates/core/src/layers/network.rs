use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    BasicBlock, BatchNorm2d, BlockKind, BlockSpec, Conv2d, ForwardCtx, Linear, Mode, WeightNormConv2d, BN_EPS,
    BN_MOMENTUM,
};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, ParamId, Tape, Tensor, Var};

/// Shape of a desk-scale residual network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub kind: BlockKind,
    pub classes: usize,
    pub dropout_p: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl NetworkSpec {
    pub fn new(in_channels: usize, widths: &[usize], blocks: &[usize], kind: BlockKind, classes: usize) -> Self {
        Self {
            in_channels,
            widths: widths.to_vec(),
            blocks: blocks.to_vec(),
            kind,
            classes,
            dropout_p: 0.0,
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("network spec: {msg}")));
        if self.widths.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.widths.len() != self.blocks.len() {
            return bad(format!(
                "{} stage widths but {} block counts",
                self.widths.len(),
                self.blocks.len()
            ));
        }
        if self.blocks.contains(&0) || self.widths.contains(&0) {
            return bad("every stage needs a positive width and at least one block".into());
        }
        if self.in_channels == 0 || self.classes < 2 {
            return bad("need positive input channels and at least two classes".into());
        }
        if self.kind != BlockKind::ModifiedWeightnorm && self.dropout_p != 0.0 {
            return bad(format!("dropout requires modified blocks, not {}", self.kind));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Stem<T: Element> {
    Bn { conv: Conv2d, bn: BatchNorm2d<T> },
    WeightNorm(WeightNormConv2d),
    Plain(Conv2d),
}

/// A named layer and the parameters it owns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub params: Vec<ParamId>,
}

/// Stem convolution, residual stages, global average pool and a linear classifier.
#[derive(Clone, Debug)]
pub struct Network<T: Element = f32> {
    spec: NetworkSpec,
    store: ParamStore<T>,
    stem: Stem<T>,
    blocks: Vec<BasicBlock<T>>,
    fc: Linear,
}

impl<T: Element> Network<T> {
    pub fn build(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let width0 = spec.widths[0];
        let stem = match spec.kind {
            BlockKind::OriginalBn => Stem::Bn {
                conv: Conv2d::new(
                    &mut store,
                    "stem.conv",
                    spec.in_channels,
                    width0,
                    3,
                    1,
                    1,
                    false,
                    &mut rng,
                ),
                bn: BatchNorm2d::new(&mut store, "stem.bn", width0, spec.bn_eps, spec.bn_momentum)?,
            },
            BlockKind::ModifiedWeightnorm => Stem::WeightNorm(WeightNormConv2d::new(
                &mut store,
                "stem.conv",
                spec.in_channels,
                width0,
                3,
                1,
                1,
                &mut rng,
            )?),
            BlockKind::Plain => Stem::Plain(Conv2d::new(
                &mut store,
                "stem.conv",
                spec.in_channels,
                width0,
                3,
                1,
                1,
                true,
                &mut rng,
            )),
        };
        let mut blocks = Vec::new();
        let mut channels = width0;
        for (s, (&width, &count)) in spec.widths.iter().zip(&spec.blocks).enumerate() {
            for b in 0..count {
                let block_spec = BlockSpec {
                    kind: spec.kind,
                    in_channels: channels,
                    out_channels: width,
                    stride: if s > 0 && b == 0 { 2 } else { 1 },
                    dropout_p: spec.dropout_p,
                };
                let name = format!("stage{}.block{}", s + 1, b + 1);
                blocks.push(BasicBlock::new(
                    &mut store,
                    &name,
                    block_spec,
                    spec.bn_eps,
                    spec.bn_momentum,
                    &mut rng,
                )?);
                channels = width;
            }
        }
        let fc = Linear::new(&mut store, "fc", channels, spec.classes, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            store,
            stem,
            blocks,
            fc,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn parameters_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn blocks(&self) -> &[BasicBlock<T>] {
        &self.blocks
    }

    /// Records the forward pass of `x: [N, C, H, W]` and returns the logits `[N, classes]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "network",
                left: shape.to_vec(),
                right: vec![self.spec.in_channels],
            });
        }
        let store = &self.store;
        let mut h = match &mut self.stem {
            Stem::Bn { conv, bn } => {
                let h = conv.forward(tape, store, x)?;
                bn.forward(tape, store, h, ctx.mode)?
            }
            Stem::WeightNorm(conv) => conv.forward(tape, store, x)?,
            Stem::Plain(conv) => conv.forward(tape, store, x)?,
        };
        h = tape.relu(h)?;
        for block in &mut self.blocks {
            h = block.forward(tape, store, h, ctx)?;
        }
        let pooled = tape.mean(h, &[2, 3])?;
        self.fc.forward(tape, store, pooled)
    }

    /// Logits for a batch without keeping the tape.
    pub fn predict(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let mut ctx = match mode {
            Mode::Train => ForwardCtx::train(0),
            Mode::Eval => ForwardCtx::eval(),
        };
        let logits = self.forward(&mut tape, input, &mut ctx)?;
        Ok(tape.value(logits).clone())
    }

    /// Train-mode forward, cross-entropy loss and backward. Gradients are added
    /// to the stored ones; the caller zeroes them between steps.
    pub fn forward_backward(&mut self, x: &Tensor<T>, labels: &[usize], seed: u64) -> Result<(f64, Tensor<T>)> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone());
        let mut ctx = ForwardCtx::train(seed);
        let logits = self.forward(&mut tape, input, &mut ctx)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = tape.value(loss).item().as_f64();
        tape.backward(loss)?;
        self.store.accumulate_grads(&tape)?;
        Ok((loss_value, tape.value(logits).clone()))
    }

    /// Layers in forward order with stable dotted names (`stage2.block1.conv2`).
    pub fn named_layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        match &self.stem {
            Stem::Bn { conv, bn } => {
                out.push((conv.name.clone(), conv.params()));
                out.push((bn.name.clone(), bn.params()));
            }
            Stem::WeightNorm(conv) => out.push((conv.name.clone(), conv.params())),
            Stem::Plain(conv) => out.push((conv.name.clone(), conv.params())),
        }
        for block in &self.blocks {
            out.extend(block.layers());
        }
        out.push((self.fc.name.clone(), self.fc.params()));
        out.into_iter()
            .map(|(name, params)| LayerInfo { name, params })
            .collect()
    }

    fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        let mut v = Vec::new();
        if let Stem::Bn { bn, .. } = &self.stem {
            v.push(bn);
        }
        for block in &self.blocks {
            v.extend(block.batch_norms());
        }
        v
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        let mut v = Vec::new();
        if let Stem::Bn { bn, .. } = &mut self.stem {
            v.push(bn);
        }
        for block in &mut self.blocks {
            v.extend(block.batch_norms_mut());
        }
        v
    }

    /// Non-trainable state (BN running statistics) by name.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.batch_norms()
            .into_iter()
            .flat_map(|bn| {
                [
                    (format!("{}.running_mean", bn.name), &bn.running_mean),
                    (format!("{}.running_var", bn.name), &bn.running_var),
                ]
            })
            .collect()
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.batch_norms_mut().into_iter().find_map(|bn| {
            if name == format!("{}.running_mean", bn.name) {
                Some(&mut bn.running_mean)
            } else if name == format!("{}.running_var", bn.name) {
                Some(&mut bn.running_var)
            } else {
                None
            }
        })
    }

    /// Fails if any weight-norm direction has collapsed to zero in some channel.
    pub fn check_weight_norms(&self) -> Result<()> {
        if let Stem::WeightNorm(conv) = &self.stem {
            conv.check_direction(&self.store)?;
        }
        for block in &self.blocks {
            for conv in block.weight_norm_convs() {
                conv.check_direction(&self.store)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: BlockKind) -> NetworkSpec {
        NetworkSpec::new(3, &[16, 32], &[2, 2], kind, 10)
    }

    #[test]
    fn logits_shape() {
        for kind in [BlockKind::OriginalBn, BlockKind::ModifiedWeightnorm, BlockKind::Plain] {
            let mut net = Network::<f32>::build(&spec(kind), 1).unwrap();
            let x = Tensor::zeros(&[2, 3, 32, 32]);
            let y = net.predict(&x, Mode::Eval).unwrap();
            assert_eq!(y.shape(), &[2, 10], "{kind}");
        }
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        // widths (4, 8), one block per stage, 2 input channels, 3 classes.
        let s = NetworkSpec::new(2, &[4, 8], &[1, 1], BlockKind::OriginalBn, 3);
        let net = Network::<f32>::build(&s, 0).unwrap();
        // stem conv 4*2*9=72, stem bn 8
        // stage1.block1: conv1 4*4*9=144, bn1 8, conv2 144, bn2 8           -> 304
        // stage2.block1: conv1 8*4*9=288, bn1 16, conv2 8*8*9=576, bn2 16,
        //                shortcut 8*4=32, shortcut_bn 16                    -> 944
        // fc 8*3+3=27
        assert_eq!(net.parameters().element_count(), 72 + 8 + 304 + 944 + 27);

        let s = NetworkSpec::new(2, &[4, 8], &[1, 1], BlockKind::ModifiedWeightnorm, 3);
        let net = Network::<f32>::build(&s, 0).unwrap();
        // stem v 72 + g 4 + b 4 = 80
        // stage1.block1: (144+4+4)*2 = 304
        // stage2.block1: conv1 288+8+8, conv2 576+8+8, shortcut 32+8+8 = 944
        assert_eq!(net.parameters().element_count(), 80 + 304 + 944 + 27);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Network::<f32>::build(&spec(BlockKind::ModifiedWeightnorm), 7).unwrap();
        let b = Network::<f32>::build(&spec(BlockKind::ModifiedWeightnorm), 7).unwrap();
        let c = Network::<f32>::build(&spec(BlockKind::ModifiedWeightnorm), 8).unwrap();
        assert_eq!(a.parameters(), b.parameters());
        assert_ne!(a.parameters(), c.parameters());
    }

    #[test]
    fn layer_names_are_stable() {
        let net = Network::<f32>::build(&spec(BlockKind::OriginalBn), 0).unwrap();
        let names: Vec<String> = net.named_layers().into_iter().map(|l| l.name).collect();
        assert_eq!(names[0], "stem.conv");
        assert!(names.contains(&"stage2.block1.conv2".to_string()));
        assert!(names.contains(&"stage2.block1.shortcut_bn".to_string()));
        assert!(!names.contains(&"stage1.block1.shortcut".to_string()));
        assert_eq!(names.last().unwrap(), "fc");
        assert_eq!(net.buffers().len(), 2 * (1 + 2 + 2 + 3 + 2));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(BlockKind::OriginalBn);
        s.blocks = vec![2, 0];
        assert!(Network::<f32>::build(&s, 0).is_err());
        let s = spec(BlockKind::OriginalBn).with_dropout(0.1);
        assert!(Network::<f32>::build(&s, 0).is_err());
        let mut s = spec(BlockKind::Plain);
        s.widths.clear();
        s.blocks.clear();
        assert!(Network::<f32>::build(&s, 0).is_err());
    }
}
