//! Named parameter storage and its binding onto a tape.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::ModelError;

/// All trainable tensors of a model, keyed by canonical dotted names.
///
/// Iteration order is the lexicographic order of names, which makes every
/// traversal (initialization, serialization, optimizer updates) reproducible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform init in `(-bound, bound)` for every `(name, shape)` pair.
    pub fn init_uniform<R: Rng + ?Sized>(
        shapes: &[(String, Vec<usize>)],
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut store = ParamStore::new();
        for (name, shape) in shapes {
            store.insert(name.clone(), Tensor::uniform(shape, bound, rng));
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Records every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Records every tensor as a constant; used for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for the tensors of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Pulls each parameter's gradient out of `grads`; parameters the loss
    /// did not reach get zeros.
    pub fn collect(&self, store: &ParamStore, grads: &mut Gradients) -> ParamGrads {
        let entries = self
            .vars
            .iter()
            .map(|(name, &v)| {
                let g = grads.take(v).unwrap_or_else(|| {
                    Tensor::zeros(store.get(name).expect("bound from store").shape())
                });
                (name.clone(), g)
            })
            .collect();
        ParamGrads { entries }
    }
}

/// Gradients aligned with a [`ParamStore`] by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    entries: BTreeMap<String, Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
            .collect();
        ParamGrads { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (name, g) in self.entries.iter_mut() {
            if let Some(o) = other.entries.get(name) {
                for (a, b) in g.data_mut().iter_mut().zip(o.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.entries.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Tensor::is_finite)
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
    }
}
