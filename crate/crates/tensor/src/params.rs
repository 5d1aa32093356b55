//! Named parameter storage shared between forward passes and optimizers.

use crate::graph::{Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T: Real> {
    pub name: String,
    pub value: Tensor<T>,
    /// Frozen entries are bound as constants and skipped by optimizers.
    pub trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        self.entries.push(ParamEntry { name: name.into(), value, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry_mut(&mut self, index: usize) -> &mut ParamEntry<T> {
        &mut self.entries[index]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), value: e.value.cast(), trainable: e.trainable })
                .collect(),
        }
    }

    /// Places every entry on `graph`: trainable entries as parameters,
    /// frozen ones as constants.
    pub fn bind<'g>(&self, graph: &'g Graph<T>) -> Bound<'g, T> {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if e.trainable {
                    graph.param(e.value.clone())
                } else {
                    graph.constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters of a [`ParamStore`] placed on one graph.
pub struct Bound<'g, T: Real> {
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Real> Bound<'g, T> {
    /// Binds caller-owned variables in store order, e.g. to differentiate
    /// with respect to weights under a gradient check.
    pub fn from_vars(vars: Vec<Var<'g, T>>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }
}
