//! Flat, ordered parameter storage shared by every layer of a model.
//!
//! Layers hold [`ParamId`]s into a [`ParamStore`]. The store's order is the
//! declaration order used by checkpoints and parameter accounting.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Registers a trainable tensor.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor.with_requires_grad(true));
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Number of scalar weights allocated.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bindings {
        Bindings(self.tensors.iter().map(|t| tape.leaf(t)).collect())
    }

    /// Records every parameter as a constant leaf (no gradients).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bindings {
        Bindings(
            self.tensors
                .iter()
                .map(|t| tape.leaf(&t.clone().with_requires_grad(false)))
                .collect(),
        )
    }

    /// Adds the tape gradients of `bindings` into the stored tensors.
    pub fn accumulate_grads(&mut self, tape: &Tape, bindings: &Bindings) {
        for (t, &v) in self.tensors.iter_mut().zip(&bindings.0) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Gradient of parameter `id`, treating a missing buffer as zeros.
    pub fn grad_or_zeros(&self, id: ParamId) -> Vec<f64> {
        let t = &self.tensors[id.0];
        t.grad().map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
    }

    /// Replaces every tensor's data, keeping names and shapes. Used by
    /// checkpoint loading.
    pub(crate) fn replace_data(&mut self, data: Vec<Vec<f64>>) {
        for (t, d) in self.tensors.iter_mut().zip(data) {
            t.data_mut().copy_from_slice(&d);
        }
    }
}
