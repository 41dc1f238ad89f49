//! Named parameter table shared by the encoder, memory hops, and decoder.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered name -> tensor table. Insertion order is stable so checkpoints
/// and gradient traversals are deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> usize {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Param { name: name.to_string(), value, trainable });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::InvalidArg(format!("unknown parameter {name}")))
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArg(format!("unknown parameter {name}")))
    }

    pub fn by_id(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn by_id_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Lease every parameter onto a tape. Trainable parameters become
    /// gradient leaves when `train` is set.
    pub fn bind<'t>(&self, tape: &'t Tape, train: bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), train && p.trainable))
            .collect();
        Bound { tape, vars, index: self.index.clone() }
    }
}

/// One forward pass's view of a [`ParamSet`]: parameter name -> tape leaf.
pub struct Bound<'t> {
    pub tape: &'t Tape,
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, name: &str) -> Var {
        self.vars[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))]
    }

    pub fn var_by_id(&self, id: usize) -> Var {
        self.vars[id]
    }

    /// Gradients in parameter order (zeros where none accumulated).
    pub fn grads(&self, params: &ParamSet) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(params.iter())
            .map(|(&v, p)| {
                self.tape
                    .grad(v)
                    .unwrap_or_else(|| Tensor::zeros(p.value.rows(), p.value.cols()))
            })
            .collect()
    }

    /// Add this pass's gradients into `acc` (parameter order) without
    /// allocating; leaves with no accumulated gradient contribute nothing.
    pub fn accumulate_grads(&self, acc: &mut [Tensor]) {
        for (&v, a) in self.vars.iter().zip(acc.iter_mut()) {
            self.tape.add_grad_to(v, a.data_mut());
        }
    }
}
