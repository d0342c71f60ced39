use super::conv::{self, ConvGeometry};
use super::{ensure_same_shape, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identity of a trainable parameter, stable across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Per-channel broadcast applied along axis 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelOp {
    Add,
    Sub,
    Mul,
}

enum Op<T: Element> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Rsqrt(Var),
    Mask(Var, Tensor<T>),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    Mean {
        x: Var,
        axes: Vec<bool>,
    },
    Variance {
        x: Var,
        axes: Vec<bool>,
        mean: Vec<T>,
    },
    Channel {
        op: ChannelOp,
        x: Var,
        c: Var,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<T>,
    },
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

impl<T: Element> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Relu(_) => "relu",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Rsqrt(_) => "rsqrt",
            Op::Mask(..) => "mask",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Mean { .. } => "mean",
            Op::Variance { .. } => "variance",
            Op::Channel { .. } => "channel",
            Op::WeightNorm { .. } => "weight_norm",
            Op::Sum(_) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records executed ops in topological order and differentiates them in reverse.
///
/// A tape is built fresh for every forward pass. After [`Tape::backward`] the
/// tape is consumed; leaf gradients stay readable through [`Tape::grad`] and
/// [`Tape::param_grads`].
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
    relu_margin: f64,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            relu_margin: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss with respect to a leaf, available after backward.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter leaf reached by backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.nodes.iter().enumerate().filter_map(|(i, node)| {
            let id = node.param?;
            self.grads.get(i)?.as_ref().map(|g| (id, g))
        })
    }

    /// Smallest `|x|` seen by any ReLU on this tape. Finite-difference checks
    /// are only meaningful when this exceeds the probe step.
    pub fn relu_margin(&self) -> f64 {
        self.relu_margin
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, id: ParamId, value: &Tensor<T>) -> Var {
        let v = self.leaf(value.clone(), true);
        self.nodes[v.0].param = Some(id);
        v
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: format!("output of {}", op.name()),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        ensure_same_shape(name, x.shape(), y.shape())?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |p, q| p + q)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |p, q| p - q)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |p, q| p * q)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let margin = x.data().iter().map(|v| v.as_f64().abs()).fold(f64::INFINITY, f64::min);
        let out = x.map(|v| if v > T::zero() { v } else { T::zero() });
        self.relu_margin = self.relu_margin.min(margin);
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push(out, Op::AddScalar(a, s), &[a])
    }

    /// `1 / sqrt(x)` for strictly positive `x`.
    pub fn rsqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::InvalidArgument("rsqrt of a non-positive value".into()));
        }
        let out = x.map(|v| v.sqrt().recip());
        self.push(out, Op::Rsqrt(a), &[a])
    }

    /// Multiply by a fixed tensor (dropout masks); no gradient flows to the mask.
    pub fn mask(&mut self, a: Var, mask: Tensor<T>) -> Result<Var> {
        let x = self.value(a);
        ensure_same_shape("mask", x.shape(), mask.shape())?;
        let data = x.data().iter().zip(mask.data()).map(|(&p, &m)| p * m).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(out, Op::Mask(a, mask), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 || x.shape()[1] != y.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, x.data(), false, y.data(), false, &mut out, false);
        let out = Tensor::new(&[m, n], out)?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Cross-correlation of `[N,Cin,H,W]` with `[Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        if x.ndim() != 4 || k.ndim() != 4 || x.shape()[1] != k.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x.shape().to_vec(),
                right: k.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                reason: format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            });
        }
        let geom = ConvGeometry {
            batch: n,
            in_channels: cin,
            height: h,
            width: w,
            out_channels: cout,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let mut out = vec![T::zero(); n * cout * geom.out_h * geom.out_w];
        conv::forward(&geom, x.data(), k.data(), &mut out);
        let out = Tensor::new(&[n, cout, geom.out_h, geom.out_w], out)?;
        self.push(out, Op::Conv2d { input, kernel, geom }, &[input, kernel])
    }

    /// Mean and biased variance over `axes`; reduced axes are removed from the result shape.
    pub fn reduce_stats(&mut self, x: Var, axes: &[usize]) -> Result<(Var, Var)> {
        let mask = axis_mask(self.shape(x), axes)?;
        let (mean, count) = reduce_mean(self.value(x), &mask);
        let out_shape = kept_shape(self.shape(x), &mask);
        let map = ReduceMap::new(self.shape(x), &mask);
        let mut acc = vec![0.0f64; mean.len()];
        for (i, &v) in self.value(x).data().iter().enumerate() {
            let o = map.slot(i);
            let d = (v - mean[o]).as_f64();
            acc[o] += d * d;
        }
        let var: Vec<T> = acc.iter().map(|&v| T::of(v / count as f64)).collect();
        let mean_t = Tensor::new(&out_shape, mean.clone())?;
        let var_t = Tensor::new(&out_shape, var)?;
        let m = self.push(mean_t, Op::Mean { x, axes: mask.clone() }, &[x])?;
        let v = self.push(var_t, Op::Variance { x, axes: mask, mean }, &[x])?;
        Ok((m, v))
    }

    /// Mean over `axes` only.
    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let mask = axis_mask(self.shape(x), axes)?;
        let (mean, _) = reduce_mean(self.value(x), &mask);
        let out = Tensor::new(&kept_shape(self.shape(x), &mask), mean)?;
        self.push(out, Op::Mean { x, axes: mask }, &[x])
    }

    /// Broadcast a `[C]` vector along axis 1 of `x: [N, C, ...]`.
    pub fn channel(&mut self, op: ChannelOp, x: Var, c: Var) -> Result<Var> {
        let (xs, cs) = (self.value(x), self.value(c));
        if xs.ndim() < 2 || cs.ndim() != 1 || xs.shape()[1] != cs.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "channel",
                left: xs.shape().to_vec(),
                right: cs.shape().to_vec(),
            });
        }
        let channels = cs.numel();
        let inner: usize = xs.shape()[2..].iter().product();
        let cv = cs.data();
        let data = xs
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = cv[(i / inner) % channels];
                match op {
                    ChannelOp::Add => v + k,
                    ChannelOp::Sub => v - k,
                    ChannelOp::Mul => v * k,
                }
            })
            .collect();
        let out = Tensor::new(xs.shape(), data)?;
        self.push(out, Op::Channel { op, x, c }, &[x, c])
    }

    /// Weight-normalized kernel: for each output channel `c`, `w_c = g_c * v_c / ||v_c||`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let (vs, gs) = (self.value(v), self.value(g));
        if vs.ndim() < 1 || gs.ndim() != 1 || vs.shape()[0] != gs.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "weight_norm",
                left: vs.shape().to_vec(),
                right: gs.shape().to_vec(),
            });
        }
        let channels = gs.numel();
        let per = vs.numel() / channels;
        let mut norms = Vec::with_capacity(channels);
        let mut data = Vec::with_capacity(vs.numel());
        for (c, chunk) in vs.data().chunks(per).enumerate() {
            let norm = T::of(chunk.iter().map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt());
            if norm <= T::zero() {
                return Err(Error::InvalidArgument(format!(
                    "weight-norm direction for output channel {c} has zero norm"
                )));
            }
            let s = gs.data()[c] / norm;
            data.extend(chunk.iter().map(|&x| x * s));
            norms.push(norm);
        }
        let out = Tensor::new(vs.shape(), data)?;
        self.push(out, Op::WeightNorm { v, g, norms }, &[v, g])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Batch-mean of `-log softmax(logits)[label]`, max-shift stabilized.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.ndim() != 2 || z.shape()[0] != labels.len() {
            return Err(Error::InvalidShape {
                op: "softmax_cross_entropy",
                reason: format!("logits {:?} do not match {} labels", z.shape(), labels.len()),
            });
        }
        let (n, classes) = (z.shape()[0], z.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let mut probs = Vec::with_capacity(n * classes);
        let mut total = 0.0f64;
        for (row, &label) in z.data().chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
            let denom: T = exps.iter().copied().sum();
            let log_denom = denom.ln();
            total += (log_denom - (row[label] - max)).as_f64();
            probs.extend(exps.iter().map(|&e| e / denom));
        }
        let out = Tensor::scalar(T::of(total / n as f64));
        self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Reverse pass from a scalar loss. Populates leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.clone())?;
                self.accumulate(grads, *b, || g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.clone())?;
                self.accumulate(grads, *b, || g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, || zip_map(g, y, |p, q| p * q))?;
                self.accumulate(grads, *b, || zip_map(g, x, |p, q| p * q))?;
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, || {
                    zip_map(g, x, |p, q| if q > T::zero() { p } else { T::zero() })
                })?;
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, || g.map(|v| v * *s))?,
            Op::AddScalar(a, _) => self.accumulate(grads, *a, || g.clone())?,
            Op::Rsqrt(a) => {
                let y = &node.value;
                let half = T::of(-0.5);
                self.accumulate(grads, *a, || zip_map(g, y, |p, q| p * half * q * q * q))?;
            }
            Op::Mask(a, mask) => self.accumulate(grads, *a, || zip_map(g, mask, |p, q| p * q))?,
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                self.accumulate(grads, *a, || {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, gd, false, y.data(), true, &mut da, false);
                    Tensor::new(&[m, k], da).expect("matmul grad shape")
                })?;
                self.accumulate(grads, *b, || {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, x.data(), true, gd, false, &mut db, false);
                    Tensor::new(&[k, n], db).expect("matmul grad shape")
                })?;
            }
            Op::Conv2d { input, kernel, geom } => {
                let (x, k) = (self.value(*input), self.value(*kernel));
                let want_x = self.nodes[input.0].requires_grad;
                let want_k = self.nodes[kernel.0].requires_grad;
                let mut dx = want_x.then(|| vec![T::zero(); x.numel()]);
                let mut dk = want_k.then(|| vec![T::zero(); k.numel()]);
                conv::backward(geom, x.data(), k.data(), gd, dx.as_deref_mut(), dk.as_deref_mut());
                if let Some(dx) = dx {
                    let dx = Tensor::new(x.shape(), dx)?;
                    self.accumulate(grads, *input, || dx)?;
                }
                if let Some(dk) = dk {
                    let dk = Tensor::new(k.shape(), dk)?;
                    self.accumulate(grads, *kernel, || dk)?;
                }
            }
            Op::Mean { x, axes } => {
                let xs = self.value(*x);
                let map = ReduceMap::new(xs.shape(), axes);
                let inv = T::of(1.0 / reduced_count(xs.shape(), axes) as f64);
                self.accumulate(grads, *x, || {
                    let data = (0..xs.numel()).map(|i| gd[map.slot(i)] * inv).collect();
                    Tensor::new(xs.shape(), data).expect("mean grad shape")
                })?;
            }
            Op::Variance { x, axes, mean } => {
                let xs = self.value(*x);
                let map = ReduceMap::new(xs.shape(), axes);
                let scale = T::of(2.0 / reduced_count(xs.shape(), axes) as f64);
                self.accumulate(grads, *x, || {
                    let data = xs
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let o = map.slot(i);
                            gd[o] * scale * (v - mean[o])
                        })
                        .collect();
                    Tensor::new(xs.shape(), data).expect("variance grad shape")
                })?;
            }
            Op::Channel { op, x, c } => {
                let (xs, cs) = (self.value(*x), self.value(*c));
                let channels = cs.numel();
                let inner: usize = xs.shape()[2..].iter().product();
                let ch = |i: usize| (i / inner) % channels;
                self.accumulate(grads, *x, || match op {
                    ChannelOp::Add | ChannelOp::Sub => g.clone(),
                    ChannelOp::Mul => {
                        let data = gd.iter().enumerate().map(|(i, &p)| p * cs.data()[ch(i)]).collect();
                        Tensor::new(xs.shape(), data).expect("channel grad shape")
                    }
                })?;
                self.accumulate(grads, *c, || {
                    let mut dc = vec![0.0f64; channels];
                    for (i, &p) in gd.iter().enumerate() {
                        let term = match op {
                            ChannelOp::Add => p.as_f64(),
                            ChannelOp::Sub => -p.as_f64(),
                            ChannelOp::Mul => p.as_f64() * xs.data()[i].as_f64(),
                        };
                        dc[ch(i)] += term;
                    }
                    Tensor::new(cs.shape(), dc.into_iter().map(T::of).collect()).expect("channel grad shape")
                })?;
            }
            Op::WeightNorm { v, g: gv, norms } => {
                let (vs, gs) = (self.value(*v), self.value(*gv));
                let per = vs.numel() / gs.numel();
                let dots: Vec<T> = gd
                    .chunks(per)
                    .zip(vs.data().chunks(per))
                    .map(|(gc, vc)| T::of(gc.iter().zip(vc).map(|(&p, &q)| p.as_f64() * q.as_f64()).sum()))
                    .collect();
                self.accumulate(grads, *gv, || {
                    let data = dots.iter().zip(norms).map(|(&d, &n)| d / n).collect();
                    Tensor::new(gs.shape(), data).expect("weight norm grad shape")
                })?;
                self.accumulate(grads, *v, || {
                    let mut data = Vec::with_capacity(vs.numel());
                    for (c, (gc, vc)) in gd.chunks(per).zip(vs.data().chunks(per)).enumerate() {
                        let n = norms[c];
                        let s = gs.data()[c] / n;
                        let proj = dots[c] / (n * n);
                        data.extend(gc.iter().zip(vc).map(|(&p, &q)| s * (p - proj * q)));
                    }
                    Tensor::new(vs.shape(), data).expect("weight norm grad shape")
                })?;
            }
            Op::Sum(x) => {
                let s = g.item();
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, || Tensor::full(&shape, s))?;
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let shape = self.shape(*logits).to_vec();
                let classes = shape[1];
                let s = g.item() / T::of(labels.len() as f64);
                self.accumulate(grads, *logits, || {
                    let mut data: Vec<T> = probs.iter().map(|&p| p * s).collect();
                    for (r, &l) in labels.iter().enumerate() {
                        data[r * classes + l] = data[r * classes + l] - s;
                    }
                    Tensor::new(&shape, data).expect("cross entropy grad shape")
                })?;
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], target: Var, make: impl FnOnce() -> Tensor<T>) -> Result<()> {
        if !self.nodes[target.0].requires_grad {
            return Ok(());
        }
        let contribution = make();
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contribution)?,
            slot @ None => *slot = Some(contribution),
        }
        Ok(())
    }
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.shape(), data).expect("zip_map operands share a shape")
}

fn axis_mask(shape: &[usize], axes: &[usize]) -> Result<Vec<bool>> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument("empty reduction axis set".into()));
    }
    let mut mask = vec![false; shape.len()];
    for &a in axes {
        if a >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "reduction axis {a} out of range for shape {shape:?}"
            )));
        }
        mask[a] = true;
    }
    Ok(mask)
}

fn kept_shape(shape: &[usize], mask: &[bool]) -> Vec<usize> {
    shape.iter().zip(mask).filter(|(_, &m)| !m).map(|(&d, _)| d).collect()
}

fn reduced_count(shape: &[usize], mask: &[bool]) -> usize {
    shape.iter().zip(mask).filter(|(_, &m)| m).map(|(&d, _)| d).product()
}

/// Maps a flat input index to its output slot under a reduction.
struct ReduceMap {
    /// `(input stride, extent, output stride)` of every kept axis.
    kept: Vec<(usize, usize, usize)>,
}

impl ReduceMap {
    fn new(shape: &[usize], mask: &[bool]) -> Self {
        let mut kept = Vec::new();
        let mut in_stride = 1;
        let mut out_stride = 1;
        for axis in (0..shape.len()).rev() {
            if !mask[axis] {
                kept.push((in_stride, shape[axis], out_stride));
                out_stride *= shape[axis];
            }
            in_stride *= shape[axis];
        }
        Self { kept }
    }

    #[inline]
    fn slot(&self, i: usize) -> usize {
        self.kept
            .iter()
            .map(|&(stride, extent, out)| (i / stride) % extent * out)
            .sum()
    }
}

fn reduce_mean<T: Element>(x: &Tensor<T>, mask: &[bool]) -> (Vec<T>, usize) {
    let count = reduced_count(x.shape(), mask);
    let out_len = x.numel() / count;
    let mut sums = vec![0.0f64; out_len];
    let map = ReduceMap::new(x.shape(), mask);
    for (i, &v) in x.data().iter().enumerate() {
        sums[map.slot(i)] += v.as_f64();
    }
    (sums.iter().map(|&s| T::of(s / count as f64)).collect(), count)
}
