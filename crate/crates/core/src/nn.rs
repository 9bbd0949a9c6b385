//! Named parameter storage and the small layers the model is built from.
//!
//! Parameters live in a [`ParamStore`] across steps. For each forward pass
//! a [`Binder`] copies the ones it touches onto a fresh tape as leaves and
//! collects batch-norm running-stat updates for the caller to commit.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::{BnConfig, BnStats, DiffArray, Mode, Real, Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub tensor: Tensor<T>,
    /// Buffers (running statistics) are stored but never optimised.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Real = f64> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(
            name.into(),
            Entry {
                tensor,
                trainable: true,
            },
        );
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.insert(
            name.into(),
            Entry {
                tensor,
                trainable: false,
            },
        );
    }

    pub(crate) fn insert_entry(&mut self, name: String, entry: Entry<T>) {
        self.entries.insert(name, entry);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::Schema(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::Schema(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Entry<T>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            tensor: e.tensor.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}

pub struct Binder<'t, 's, T: Real> {
    tape: &'t Tape<T>,
    store: &'s ParamStore<T>,
    mode: Mode,
    track_grad: bool,
    bn: BnConfig,
    leaves: RefCell<BTreeMap<String, DiffArray<'t, T>>>,
    stat_updates: RefCell<Vec<(String, BnStats<T>)>>,
}

impl<'t, 's, T: Real> Binder<'t, 's, T> {
    /// Binds for training: leaves require gradients.
    pub fn train(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self::new(tape, store, Mode::Train, true)
    }

    /// Binds for inference: eval-mode normalisation, no gradients.
    pub fn eval(tape: &'t Tape<T>, store: &'s ParamStore<T>) -> Self {
        Self::new(tape, store, Mode::Eval, false)
    }

    pub fn new(tape: &'t Tape<T>, store: &'s ParamStore<T>, mode: Mode, track_grad: bool) -> Self {
        Self {
            tape,
            store,
            mode,
            track_grad,
            bn: BnConfig::default(),
            leaves: RefCell::new(BTreeMap::new()),
            stat_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&self, name: &str) -> Result<DiffArray<'t, T>> {
        if let Some(p) = self.leaves.borrow().get(name) {
            return Ok(*p);
        }
        let t = self.store.get(name)?.clone();
        let leaf = self.tape.leaf(t, self.track_grad);
        self.leaves.borrow_mut().insert(name.to_string(), leaf);
        Ok(leaf)
    }

    /// Uses `leaf` for `name` instead of copying it from the store.
    pub fn bind_leaf(&self, name: &str, leaf: DiffArray<'t, T>) {
        self.leaves.borrow_mut().insert(name.to_string(), leaf);
    }

    pub fn bn_stats(&self, prefix: &str) -> Result<BnStats<T>> {
        Ok(BnStats {
            mean: self
                .store
                .get(&format!("{prefix}.running_mean"))?
                .data()
                .to_vec(),
            var: self
                .store
                .get(&format!("{prefix}.running_var"))?
                .data()
                .to_vec(),
        })
    }

    pub fn bn_config(&self) -> BnConfig {
        self.bn
    }

    pub(crate) fn push_stats(&self, prefix: &str, stats: BnStats<T>) {
        self.stat_updates
            .borrow_mut()
            .push((prefix.to_string(), stats));
    }

    /// Gradients of every bound parameter after `backward`.
    pub fn grads(&self) -> Vec<(String, Tensor<T>)> {
        self.leaves
            .borrow()
            .iter()
            .filter_map(|(k, v)| v.grad().map(|g| (k.clone(), g)))
            .collect()
    }

    /// Releases the store borrow, returning the running-statistic updates
    /// collected during the forward pass.
    pub fn finish(self) -> StatUpdates<T> {
        StatUpdates(self.stat_updates.into_inner())
    }
}

/// Batch-norm running statistics produced by a training-mode pass.
#[derive(Clone, Debug, Default)]
pub struct StatUpdates<T>(Vec<(String, BnStats<T>)>);

impl<T: Real> StatUpdates<T> {
    pub fn commit(self, store: &mut ParamStore<T>) -> Result<()> {
        for (prefix, stats) in self.0 {
            store
                .get_mut(&format!("{prefix}.running_mean"))?
                .data_mut()
                .copy_from_slice(&stats.mean);
            store
                .get_mut(&format!("{prefix}.running_var"))?
                .data_mut()
                .copy_from_slice(&stats.var);
        }
        Ok(())
    }
}

/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

pub fn init_normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            bias,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        store.insert(
            format!("{}.weight", self.name),
            init_uniform(&[self.d_in, self.d_out], self.d_in, rng),
        );
        if self.bias {
            store.insert(
                format!("{}.bias", self.name),
                init_uniform(&[self.d_out], self.d_in, rng),
            );
        }
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        x: DiffArray<'t, T>,
    ) -> Result<DiffArray<'t, T>> {
        let y = x.matmul(b.param(&format!("{}.weight", self.name))?)?;
        if self.bias {
            y.add_row(b.param(&format!("{}.bias", self.name))?)
        } else {
            Ok(y)
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub dim: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self {
            name: name.into(),
            dim,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(
            format!("{}.gamma", self.name),
            Tensor::full(&[self.dim], T::one()),
        );
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]));
        store.insert_buffer(
            format!("{}.running_mean", self.name),
            Tensor::zeros(&[self.dim]),
        );
        store.insert_buffer(
            format!("{}.running_var", self.name),
            Tensor::full(&[self.dim], T::one()),
        );
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        x: DiffArray<'t, T>,
    ) -> Result<DiffArray<'t, T>> {
        let stats = b.bn_stats(&self.name)?;
        let (y, updated) = x.batch_norm(
            b.param(&format!("{}.gamma", self.name))?,
            b.param(&format!("{}.beta", self.name))?,
            &stats,
            b.mode(),
            b.bn_config(),
        )?;
        if let Some(s) = updated {
            b.push_stats(&self.name, s);
        }
        Ok(y)
    }
}

/// Linear, batch norm, ReLU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub linear: Linear,
    pub norm: BatchNorm,
}

impl Mlp {
    pub fn new(name: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            linear: Linear::new(format!("{name}.linear"), d_in, d_out, false),
            norm: BatchNorm::new(format!("{name}.bn"), d_out),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        self.linear.init(store, rng);
        self.norm.init(store);
    }

    pub fn forward<'t, T: Real>(
        &self,
        b: &Binder<'t, '_, T>,
        x: DiffArray<'t, T>,
    ) -> Result<DiffArray<'t, T>> {
        let y = self.linear.forward(b, x)?;
        Ok(self.norm.forward(b, y)?.relu())
    }
}
