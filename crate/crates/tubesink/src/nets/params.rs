//! Named parameter storage shared by the models, the optimizer, and the
//! checkpoint format. Insertion order is stable and defines the layout of
//! optimizer moments and serialized checkpoints.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter {name} registered twice"
        );
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// (name, tensor) pairs in registration order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// Tape bindings for every parameter in a store, in registration order.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Insert each parameter as a trainable tape leaf.
    pub fn bind(store: &ParamStore, tape: &mut Tape) -> Self {
        let vars = store.tensors.iter().map(|t| tape.param(t.clone())).collect();
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients per parameter in store order; zeros for parameters the
    /// loss did not touch.
    pub fn collect_gradients(
        &self,
        store: &ParamStore,
        grads: &crate::tape::Gradients,
    ) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(store.tensors.iter())
            .map(|(&v, t)| grads.get_or_zeros(v, t.rows(), t.cols()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registration_order_is_stable() {
        let mut store = ParamStore::new();
        let a = store.add("psi.embed.w", Tensor::zeros(2, 3));
        let b = store.add("phi.l1.w", Tensor::zeros(1, 1));
        assert_eq!(store.name(a), "psi.embed.w");
        assert_eq!(store.name(b), "phi.l1.w");
        let names: Vec<&str> = store.entries().map(|(n, _)| n).collect();
        assert_eq!(names, vec!["psi.embed.w", "phi.l1.w"]);
        assert_eq!(store.id_of("phi.l1.w"), Some(b));
        assert_eq!(store.scalar_count(), 7);
    }

    #[test]
    #[should_panic(expected = "registered twice")]
    fn duplicate_names_panic() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(1, 1));
        store.add("w", Tensor::zeros(1, 1));
    }
}
