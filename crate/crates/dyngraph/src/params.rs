//! Name-addressable parameter and normalization-state stores.
//!
//! Names are dotted paths (`"learner.itcn.0.branch.1.w"`). BTreeMap keeps
//! iteration order deterministic, which checkpoint serialization and the
//! optimizer rely on.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::batchnorm::BnStat;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// All trainable tensors of a model, keyed by name.
#[derive(Clone, Default)]
pub struct ParamBank<S> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamBank<S> {
    pub fn new() -> Self {
        ParamBank { map: BTreeMap::new() }
    }

    /// Insert a fresh parameter. Duplicate names are a construction bug.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<S>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), tensor);
        assert!(prev.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn get(&self, name: &str) -> &Tensor<S> {
        self.map.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<S>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor<S> {
        self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    /// Overwrite an existing parameter (checkpoint restore). The replacement
    /// must match the current shape.
    pub fn set(&mut self, name: &str, tensor: Tensor<S>) -> Result<()> {
        match self.map.get_mut(name) {
            Some(slot) => {
                if slot.shape() != tensor.shape() {
                    return Err(Error::shape(
                        "param_set",
                        format!(
                            "{name:?}: stored shape {:?} vs incoming {:?}",
                            slot.shape(),
                            tensor.shape()
                        ),
                    ));
                }
                *slot = tensor;
                Ok(())
            }
            None => Err(Error::invalid("param_set", format!("unknown parameter {name:?}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Register a parameter on a tape by name.
    pub fn var(&self, tape: &mut Tape<S>, name: &str) -> Result<Var> {
        tape.param(name, self.get(name))
    }
}

/// Running statistics for every batch-norm site, keyed like parameters.
#[derive(Clone, Default)]
pub struct BnStates<S> {
    map: BTreeMap<String, BnStat<S>>,
}

impl<S: Scalar> BnStates<S> {
    pub fn new() -> Self {
        BnStates { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, channels: usize) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), BnStat::new(channels));
        assert!(prev.is_none(), "duplicate batch-norm site {name:?}");
    }

    pub fn get_mut(&mut self, name: &str) -> &mut BnStat<S> {
        self.map.get_mut(name).unwrap_or_else(|| panic!("unknown batch-norm site {name:?}"))
    }

    pub fn get(&self, name: &str) -> &BnStat<S> {
        self.map.get(name).unwrap_or_else(|| panic!("unknown batch-norm site {name:?}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &BnStat<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut BnStat<S>)> {
        self.map.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
