//! Named, ordered collection of trainable tensors. Order is insertion order
//! and doubles as the index space used by tapes and optimizers.

use std::collections::HashMap;

use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Clone)]
pub struct ParamStore<E: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
    index: HashMap<String, usize>,
}

impl<E: Scalar> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<E>) -> Result<usize, TensorError> {
        if self.index.contains_key(name) {
            return Err(TensorError::Invalid {
                op: "param_store",
                msg: format!("duplicate parameter name {name:?}"),
            });
        }
        let ix = self.values.len();
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), ix);
        Ok(ix)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_len(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn name_at(&self, ix: usize) -> &str {
        &self.names[ix]
    }

    pub fn value_at(&self, ix: usize) -> &Tensor<E> {
        &self.values[ix]
    }

    pub fn set_at(&mut self, ix: usize, value: Tensor<E>) {
        assert_eq!(self.values[ix].shape(), value.shape(), "parameter shape changed");
        self.values[ix] = value;
    }

    /// Overwrite one element, copying the buffer only if it is shared.
    pub fn set_elem(&mut self, ix: usize, flat: usize, v: E) {
        self.values[ix].make_mut()[flat] = v;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    /// Register every parameter on a tape, in store order.
    pub fn vars_on(&self, tape: &mut Tape<E>) -> Vec<Var> {
        self.iter()
            .enumerate()
            .map(|(i, (_, v))| tape.param(i, v.clone()))
            .collect()
    }

    pub fn cast<F: Scalar>(&self) -> ParamStore<F> {
        let mut out = ParamStore::new();
        for (name, value) in self.iter() {
            out.insert(name, value.cast()).unwrap();
        }
        out
    }

    /// True when every element of every parameter is finite.
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.all_finite())
    }
}
