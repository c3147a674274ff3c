use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Index of a tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learned tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, value) in other.iter() {
            let id = self
                .find(name)
                .ok_or_else(|| Error::Format(format!("unknown parameter {name}")))?;
            if self.get(id).shape() != value.shape() {
                return Err(Error::Format(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    self.get(id).shape(),
                    value.shape()
                )));
            }
            self.values[id.0] = value.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model has {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// One forward/backward pass: a fresh [`Graph`] plus lazily bound parameters.
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            g: Graph::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Leaf for a stored parameter; the same leaf is reused within a session.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let v = self.g.param(self.store.get(id).clone())?;
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.g.constant(t)
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.g.backward(loss)
    }

    /// Gradient per stored parameter; zeros for parameters the loss never touched.
    pub fn grads(&self) -> Vec<Tensor> {
        self.store
            .ids()
            .map(|id| match self.bound[id.0].and_then(|v| self.g.grad(v)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(self.store.get(id).shape()),
            })
            .collect()
    }
}
