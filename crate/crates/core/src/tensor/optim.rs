use std::collections::HashMap;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Learning-rate multiplier for filters and weight matrices.
pub const WEIGHT_LR_MULT: f64 = 1.0;
/// Learning-rate multiplier for biases.
pub const BIAS_LR_MULT: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub lr_mult: f64,
}

/// Ordered set of uniquely named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGroup {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, lr_mult: f64) -> Result<usize> {
        let name = name.into();
        if !(lr_mult > 0.0 && lr_mult.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{name}`: lr multiplier must be positive, got {lr_mult}"
            )));
        }
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            lr_mult,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn by_index(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Puts every parameter on the tape, in group order.
    pub fn load(&self, tape: &mut Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), requires_grad))
            .collect()
    }

    /// Gradients of the loaded parameters after `backward`.
    pub fn grads(&self, tape: &Tape, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| tape.grad_tensor(v)).collect()
    }
}

/// Plain SGD: `w ← w − base_lr · lr_mult · g` for every parameter.
///
/// Checks all gradients before touching any parameter, so a non-finite
/// gradient leaves the group unchanged.
pub fn sgd_step(params: &mut ParamGroup, grads: &[Tensor], base_lr: f64) -> Result<()> {
    if !(base_lr >= 0.0 && base_lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {base_lr}")));
    }
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "sgd_step: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.params.iter().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: p.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    for (p, g) in params.params.iter_mut().zip(grads) {
        let step = base_lr * p.lr_mult;
        p.value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(w, g)| *w -= step * g);
    }
    Ok(())
}
