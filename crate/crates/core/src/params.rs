//! Named parameter storage and per-graph binding.
//!
//! Modules hold [`ParamId`]s into a [`ParamStore`]. A [`Session`] binds each
//! id into one graph at most once, so a block referenced from two branches
//! evaluates the very same leaf and receives the sum of both gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{BatchStats, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Running statistics; updated from batch statistics only.
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            kinds: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.kinds.push(kind);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&i| self.kind(i) == ParamKind::Trainable).collect()
    }

    /// Mutable trainable tensors in id order, matching [`Self::trainable_ids`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let kinds = &self.kinds;
        self.tensors
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| kinds[*i] == ParamKind::Trainable)
            .map(|(_, t)| t)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.trainable_ids().iter().map(|&i| self.get(i).numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Replace every tensor's values with those of `other`, matched by name.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        for i in 0..self.len() {
            let j = other
                .find(&self.names[i])
                .ok_or_else(|| Error::Format {
                    kind: "checkpoint",
                    detail: format!("missing parameter {}", self.names[i]),
                })?;
            if other.tensors[j.0].dims() != self.tensors[i].dims() {
                return Err(Error::Format {
                    kind: "checkpoint",
                    detail: format!(
                        "parameter {} has dims {:?}, expected {:?}",
                        self.names[i],
                        other.tensors[j.0].dims(),
                        self.tensors[i].dims()
                    ),
                });
            }
            self.tensors[i] = other.tensors[j.0].clone();
        }
        Ok(())
    }
}

/// Kaiming-uniform (fan-in, gain sqrt(2)) conv weight `[out, in, k, k]`.
pub fn kaiming_uniform<T: Real>(rng: &mut impl Rng, dims: [usize; 4]) -> Tensor<T> {
    let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).expect("bound");
    Tensor::from_fn(dims.to_vec(), |_| T::lit(u.sample(rng)))
}

/// Kaiming-normal (fan-in, gain sqrt(2)) conv weight `[out, in, k, k]`.
pub fn kaiming_normal<T: Real>(rng: &mut impl Rng, dims: [usize; 4]) -> Tensor<T> {
    let fan_in = (dims[1] * dims[2] * dims[3]) as f64;
    let n = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("std");
    Tensor::from_fn(dims.to_vec(), |_| T::lit(n.sample(rng)))
}

/// Convolution weights and bias.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: usize,
}

impl ConvParams {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        weight: Tensor<T>,
        padding: usize,
    ) -> Self {
        let c_out = weight.dims()[0];
        Self {
            weight: store.add(format!("{name}.weight"), ParamKind::Trainable, weight),
            bias: store.add(format!("{name}.bias"), ParamKind::Trainable, Tensor::zeros([c_out])),
            padding,
        }
    }
}

/// Affine batch-norm parameters. Running statistics live separately in
/// [`BnStats`] so that one affine pair can serve several branches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl BnParams {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ParamKind::Trainable, Tensor::full([channels], T::one())),
            beta: store.add(format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros([channels])),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnStats {
    pub mean: ParamId,
    pub var: ParamId,
}

impl BnStats {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            mean: store.add(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros([channels])),
            var: store.add(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full([channels], T::one())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running stats updated after the step.
    Train,
    /// Running statistics.
    Eval,
}

/// One forward (and optionally backward) pass over a store.
pub struct Session<'s, T: Real = f32> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    trainable: bool,
    pending: Vec<(BnStats, BatchStats<T>)>,
}

impl<'s, T: Real> Session<'s, T> {
    /// `trainable = false` binds every parameter as a constant, which skips
    /// all gradient bookkeeping.
    pub fn new(store: &'s ParamStore<T>, mode: Mode, trainable: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            trainable,
            pending: Vec::new(),
        }
    }

    /// Continue building on an existing graph.
    pub fn from_graph(store: &'s ParamStore<T>, graph: Graph<T>, mode: Mode, trainable: bool) -> Self {
        Self {
            graph,
            ..Self::new(store, mode, trainable)
        }
    }

    pub fn into_graph(self) -> Graph<T> {
        self.graph
    }

    /// Use `v` wherever `id` is requested in this session.
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let value = self.store.get(id).clone();
        let v = if self.trainable && self.store.kind(id) == ParamKind::Trainable {
            self.graph.param(value)?
        } else {
            self.graph.constant(value)?
        };
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.graph.constant(value)
    }

    pub fn conv(&mut self, x: Var, p: &ConvParams) -> Result<Var> {
        let w = self.param(p.weight)?;
        let b = self.param(p.bias)?;
        self.graph.conv2d(x, w, Some(b), p.padding)
    }

    pub fn batchnorm(&mut self, x: Var, p: &BnParams, stats: &BnStats) -> Result<Var> {
        let gamma = self.param(p.gamma)?;
        let beta = self.param(p.beta)?;
        let eps = T::lit(BN_EPS);
        match self.mode {
            Mode::Train => {
                let (y, batch) = self.graph.batchnorm_train(x, gamma, beta, eps)?;
                self.pending.push((*stats, batch));
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.store.get(stats.mean).data().to_vec();
                let var = self.store.get(stats.var).data().to_vec();
                self.graph.batchnorm_fixed(x, gamma, beta, &mean, &var, eps)
            }
        }
    }

    /// Gradients for every bound trainable parameter, after `backward`.
    pub fn grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if self.store.kind(ParamId(i)) != ParamKind::Trainable {
                    return None;
                }
                self.graph.grad(v).map(|g| (ParamId(i), g))
            })
            .collect()
    }

    /// Running-stat updates gathered during a training-mode forward.
    pub fn take_bn_updates(&mut self) -> Vec<(BnStats, BatchStats<T>)> {
        std::mem::take(&mut self.pending)
    }
}

/// Fold batch statistics into running estimates with momentum 0.1 and the
/// unbiased variance.
pub fn apply_bn_updates<T: Real>(store: &mut ParamStore<T>, updates: &[(BnStats, BatchStats<T>)]) {
    let m = T::lit(BN_MOMENTUM);
    for (stats, batch) in updates {
        let n = batch.count as f64;
        let unbias = T::lit(n / (n - 1.0).max(1.0));
        let mean = store.get_mut(stats.mean).data_mut();
        for (r, &b) in mean.iter_mut().zip(&batch.mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        let var = store.get_mut(stats.var).data_mut();
        for (r, &b) in var.iter_mut().zip(&batch.var) {
            *r = (T::one() - m) * *r + m * b * unbias;
        }
    }
}
