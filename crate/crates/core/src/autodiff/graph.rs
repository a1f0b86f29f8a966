use super::{Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        padding: usize,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    BatchNormFixed {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Bilinear {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    MeanSpatial(Var),
    AttentionFuse {
        inputs: Vec<Var>,
        weights: Vec<T>,
    },
    Focal {
        logits: Var,
        targets: Vec<T>,
        alpha: T,
        gamma: T,
        norm: T,
    },
    SmoothL1 {
        pred: Var,
        targets: Vec<T>,
        weights: Vec<T>,
        beta: T,
        norm: T,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        weights: Vec<T>,
        norm: T,
    },
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Vec<T>>,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the
/// reverse of insertion order is a valid topological order for backward.
///
/// A graph is single-threaded; build a fresh one per forward pass.
pub struct Graph<T: Real = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) type Grads<T> = Vec<(Var, Vec<T>)>;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        value.ensure_finite("constant input")?;
        Ok(self.push_raw(value, Op::Leaf, false))
    }

    /// Trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var> {
        value.ensure_finite("parameter")?;
        Ok(self.push_raw(value, Op::Leaf, true))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.dims().to_vec(), g.clone()).expect("grad dims"))
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var], name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, rg))
    }

    /// Back-propagate from a scalar node. Gradients of all nodes are reset
    /// first, then accumulated additively over every path.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(dim_err!("backward needs a scalar, got {:?}", self.dims(loss)));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let contribs = self.backward_op(&op, Var(i), &grad);
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contribs {
                self.accumulate(v, g);
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(g) = &n.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("gradient of node {i} is not finite")));
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(&self, op: &Op<T>, out: Var, grad: &[T]) -> Grads<T> {
        let mut g: Grads<T> = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                padding,
            } => self.conv2d_backward(*input, *weight, *bias, *padding, grad, &mut g),
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => self.batchnorm_backward(*input, *gamma, *beta, mean, inv_std, true, grad, &mut g),
            Op::BatchNormFixed {
                input,
                gamma,
                beta,
                mean,
                inv_std,
            } => self.batchnorm_backward(*input, *gamma, *beta, mean, inv_std, false, grad, &mut g),
            Op::LeakyRelu { input, slope } => {
                if self.wants(*input) {
                    let x = self.value(*input).data();
                    let d = x
                        .iter()
                        .zip(grad)
                        .map(|(&x, &gr)| if x >= T::zero() { gr } else { gr * *slope })
                        .collect();
                    g.push((*input, d));
                }
            }
            Op::Bilinear { input } => self.bilinear_backward(*input, out, grad, &mut g),
            Op::Concat { inputs, axis } => {
                let dims = self.dims(out).to_vec();
                let outer: usize = dims[..*axis].iter().product();
                let inner: usize = dims[*axis + 1..].iter().product();
                let total = dims[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.dims(v)[*axis] * inner;
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            d.extend_from_slice(&grad[o * total + offset..o * total + offset + len]);
                        }
                        g.push((v, d));
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                if self.wants(*input) {
                    let in_dims = self.dims(*input);
                    let out_dims = self.dims(out);
                    let outer: usize = in_dims[..*axis].iter().product();
                    let inner: usize = in_dims[*axis + 1..].iter().product();
                    let total = in_dims[*axis] * inner;
                    let len = out_dims[*axis] * inner;
                    let mut d = vec![T::zero(); outer * total];
                    for o in 0..outer {
                        d[o * total + start * inner..o * total + start * inner + len]
                            .copy_from_slice(&grad[o * len..(o + 1) * len]);
                    }
                    g.push((*input, d));
                }
            }
            Op::Reshape { input } => {
                if self.wants(*input) {
                    g.push((*input, grad.to_vec()));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        g.push((v, grad.to_vec()));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    g.push((*a, grad.to_vec()));
                }
                if self.wants(*b) {
                    g.push((*b, grad.iter().map(|&v| -v).collect()));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let bv = self.value(*b).data();
                    g.push((*a, grad.iter().zip(bv).map(|(&gr, &y)| gr * y).collect()));
                }
                if self.wants(*b) {
                    let av = self.value(*a).data();
                    g.push((*b, grad.iter().zip(av).map(|(&gr, &x)| gr * x).collect()));
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    g.push((*a, grad.iter().map(|&v| v * *c).collect()));
                }
            }
            Op::AddScalar(a) => {
                if self.wants(*a) {
                    g.push((*a, grad.to_vec()));
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let y = self.value(out).data();
                    let d = grad
                        .iter()
                        .zip(y)
                        .map(|(&gr, &s)| gr * s * (T::one() - s))
                        .collect();
                    g.push((*a, d));
                }
            }
            Op::Softplus(a) => {
                if self.wants(*a) {
                    let x = self.value(*a).data();
                    let d = grad.iter().zip(x).map(|(&gr, &x)| gr * sigmoid(x)).collect();
                    g.push((*a, d));
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    g.push((*a, vec![grad[0]; self.value(*a).numel()]));
                }
            }
            Op::Mean(a) => {
                if self.wants(*a) {
                    let n = self.value(*a).numel();
                    g.push((*a, vec![grad[0] / T::lit(n as f64); n]));
                }
            }
            Op::MeanSpatial(a) => {
                if self.wants(*a) {
                    let dims = self.dims(*a);
                    let hw = dims[dims.len() - 2] * dims[dims.len() - 1];
                    let scale = T::one() / T::lit(hw as f64);
                    let d = grad
                        .iter()
                        .flat_map(|&gr| std::iter::repeat_n(gr * scale, hw))
                        .collect();
                    g.push((*a, d));
                }
            }
            Op::AttentionFuse { inputs, weights } => self.attention_backward(inputs, weights, grad, &mut g),
            Op::Focal {
                logits,
                targets,
                alpha,
                gamma,
                norm,
            } => {
                if self.wants(*logits) {
                    let x = self.value(*logits).data();
                    let d = x
                        .iter()
                        .zip(targets)
                        .map(|(&x, &t)| grad[0] * super::losses::focal_grad(x, t, *alpha, *gamma) / *norm)
                        .collect();
                    g.push((*logits, d));
                }
            }
            Op::SmoothL1 {
                pred,
                targets,
                weights,
                beta,
                norm,
            } => {
                if self.wants(*pred) {
                    let x = self.value(*pred).data();
                    let d = x
                        .iter()
                        .zip(targets)
                        .zip(weights)
                        .map(|((&x, &t), &w)| {
                            grad[0] * w * super::losses::smooth_l1_grad(x - t, *beta) / *norm
                        })
                        .collect();
                    g.push((*pred, d));
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                weights,
                norm,
            } => {
                if self.wants(*logits) {
                    let d = super::losses::softmax_ce_grad(self.value(*logits), labels, weights, *norm, grad[0]);
                    g.push((*logits, d));
                }
            }
        }
        g
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(dim_err!("{what}: {:?} vs {:?}", self.dims(a), self.dims(b)));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.dims().to_vec(), data).expect("same dims")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b, "add")?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b, "sub")?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dims(a, b, "mul")?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a], "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a], "add_scalar")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a], "softplus")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        let v = self
            .value(a)
            .map(|x| if x >= T::zero() { x } else { x * slope });
        self.push(v, Op::LeakyRelu { input: a, slope }, &[a], "leaky_relu")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a), &[a], "mean")
    }

    /// Mean over the two trailing (spatial) axes: `[.., H, W] -> [..]`.
    pub fn mean_spatial(&mut self, a: Var) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if dims.len() < 3 {
            return Err(dim_err!("mean_spatial needs rank >= 3, got {dims:?}"));
        }
        let hw = dims[dims.len() - 2] * dims[dims.len() - 1];
        let data: Vec<T> = self
            .value(a)
            .data()
            .chunks_exact(hw)
            .map(|c| c.iter().copied().sum::<T>() / T::lit(hw as f64))
            .collect();
        let v = Tensor::new(dims[..dims.len() - 2].to_vec(), data)?;
        self.push(v, Op::MeanSpatial(a), &[a], "mean_spatial")
    }

    pub fn reshape(&mut self, a: Var, dims: impl Into<Vec<usize>>) -> Result<Var> {
        let v = self.value(a).clone().reshape(dims)?;
        self.push(v, Op::Reshape { input: a }, &[a], "reshape")
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let base = self.dims(first).to_vec();
        if axis >= base.len() {
            return Err(dim_err!("concat axis {axis} for rank {}", base.len()));
        }
        let mut extent = 0;
        for &v in inputs {
            let d = self.dims(v);
            let compatible = d.len() == base.len()
                && d.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err!("concat of {base:?} and {d:?} along {axis}"));
            }
            extent += d[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.dims(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut dims = base;
        dims[axis] = extent;
        let value = Tensor::new(dims, data)?;
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
            "concat",
        )
    }

    /// Stack equally shaped nodes along a new leading axis.
    pub fn stack(&mut self, inputs: &[Var]) -> Result<Var> {
        let mut expanded = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let mut d = vec![1];
            d.extend_from_slice(self.dims(v));
            expanded.push(self.reshape(v, d)?);
        }
        self.concat(&expanded, 0)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if axis >= dims.len() || len == 0 || start + len > dims[axis] {
            return Err(dim_err!("slice {start}..{} of axis {axis} in {dims:?}", start + len));
        }
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let total = dims[axis] * inner;
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = self.value(a).data();
        for o in 0..outer {
            data.extend_from_slice(&src[o * total + start * inner..o * total + (start + len) * inner]);
        }
        let mut out_dims = dims;
        out_dims[axis] = len;
        let value = Tensor::new(out_dims, data)?;
        self.push(value, Op::Slice { input: a, axis, start }, &[a], "slice")
    }

    /// Entry `index` of the leading axis, with that axis removed.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let s = self.slice(a, 0, index, 1)?;
        let dims = self.dims(a)[1..].to_vec();
        self.reshape(s, dims)
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
