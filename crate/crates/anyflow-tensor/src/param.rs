use std::collections::HashMap;

use crate::data::TensorData;
use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

/// Stable handle to a named parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat registry of named model parameters, independent of any tape.
///
/// Parameters are bound onto a tape per forward pass (`Tape::bind_param`);
/// the optimizer mutates the store between passes.
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<TensorData<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: TensorData<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name:?}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &TensorData<T> {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn set(&mut self, id: ParamId, value: TensorData<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(TensorError::shape(
                "ParamStore::set",
                format!(
                    "parameter {:?} has shape {:?}, new value {:?}",
                    self.names[id.0],
                    self.values[id.0].shape(),
                    value.shape()
                ),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorData<T>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Element-wise cast of every parameter (used to run the same model in
    /// the 64-bit verification mode).
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(|v| v.cast::<U>()).collect(),
            index: self.index.clone(),
        }
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}
