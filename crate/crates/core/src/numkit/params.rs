use std::collections::HashMap;

use super::{Gradients, Graph, NumError, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Whether decoupled weight decay applies. Embedding tables opt out.
    pub decay: bool,
}

/// Named parameters in registration order. The order is part of the
/// checkpoint format and of the optimizer state layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> Result<(), NumError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, decay });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.entries[i].value)
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Registers every parameter as a gradient-tracked leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundParams<'_> {
        let vars = self.entries.iter().map(|e| g.param(e.value.clone())).collect();
        BoundParams { store: self, vars }
    }

    /// Registers every parameter as a constant (no gradient tracking).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundParams<'_> {
        let vars = self.entries.iter().map(|e| g.constant(e.value.clone())).collect();
        BoundParams { store: self, vars }
    }
}

/// Graph handles for a [`ParamStore`], looked up by parameter name.
pub struct BoundParams<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl BoundParams<'_> {
    /// Panics on an unknown name: parameter names are fixed by the model
    /// definition, so a miss is a programming error.
    pub fn get(&self, name: &str) -> Var {
        match self.store.position(name) {
            Some(i) => self.vars[i],
            None => panic!("unknown parameter {name:?}"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<Var> {
        self.store.position(name).map(|i| self.vars[i])
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients aligned with the store order; unused parameters get zeros.
    pub fn collect_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(self.store.entries())
            .map(|(&v, e)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(e.value.shape())))
            .collect()
    }
}
