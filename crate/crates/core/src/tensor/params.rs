use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dense::Tensor;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Named collection of model parameters.
///
/// Names are unique and shapes are fixed once a parameter is inserted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

/// Per-parameter gradients keyed by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    pub grads: BTreeMap<String, Tensor>,
}

impl ParamGrads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    /// Adds `other` into `self` elementwise, inserting missing entries.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(dst) => dst
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .for_each(|(d, s)| *d += s),
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a new trainable parameter. Duplicate names are rejected.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        self.insert_with(name, value, true)
    }

    pub fn insert_with(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces a parameter's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("ParamStore::set", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .trainable = trainable;
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Records every parameter as a tape leaf. Frozen parameters become
    /// constants.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| {
                let v = if p.trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Collects the gradient of every bound parameter; unreachable ones are
    /// zero tensors of the parameter's shape.
    pub fn gradients(&self, grads: &Gradients) -> ParamGrads {
        ParamGrads {
            grads: self
                .vars
                .iter()
                .map(|(name, &v)| (name.clone(), grads.get(v)))
                .collect(),
        }
    }
}
