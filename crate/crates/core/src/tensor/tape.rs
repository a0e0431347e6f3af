//! Operation tape and the reverse sweep.
//!
//! Every differentiable operation appends a node holding its output value
//! and, when some input requires a gradient, a boxed [`Op`] that knows how
//! to push the output gradient back to its inputs. Inputs always precede
//! their consumers, so a single reverse pass visits each node once.
//!
//! `backward` leaves the tape intact: leaf gradients accumulate across
//! calls (sum semantics) until [`Tape::zero_grads`] is called, while
//! interior gradients are recomputed from scratch on every call.

use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
pub trait Op {
    fn name(&self) -> &'static str;
    fn backward(&self, ctx: &mut BackwardCtx<'_>);
}

/// View handed to [`Op::backward`]: read access to all values and the
/// output gradient, write access to the gradients of earlier nodes.
pub struct BackwardCtx<'a> {
    values: &'a [Tensor],
    requires: &'a [bool],
    grads: &'a mut [Option<Vec<f64>>],
    out: &'a Tensor,
    out_grad: &'a [f64],
}

impl<'a> BackwardCtx<'a> {
    pub fn out_grad(&self) -> &'a [f64] {
        self.out_grad
    }

    pub fn out_value(&self) -> &'a Tensor {
        self.out
    }

    pub fn value(&self, v: Var) -> &'a Tensor {
        &self.values[v.0]
    }

    /// Whether `v` participates in gradient flow.
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient buffer of `v`, zero-initialised on first use.
    pub fn grad_mut(&mut self, v: Var) -> &mut [f64] {
        let n = self.values[v.0].numel();
        self.grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    requires: Vec<bool>,
    leaf: Vec<bool>,
    ops: Vec<Option<Box<dyn Op>>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.values.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leaf node; gradients accumulate into it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, true, None)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` as a tensor; zeros when nothing flowed into it.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = &self.values[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::from_parts(value.shape().to_vec(), g.clone()),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub fn any_requires(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.requires[v.0])
    }

    /// Appends the output of an operation. `op` is kept only when the
    /// output participates in gradient flow.
    pub fn record(&mut self, value: Tensor, requires_grad: bool, op: impl Op + 'static) -> Var {
        let op: Option<Box<dyn Op>> = if requires_grad {
            Some(Box::new(op))
        } else {
            None
        };
        self.push(value, requires_grad, false, op)
    }

    fn push(&mut self, value: Tensor, requires: bool, leaf: bool, op: Option<Box<dyn Op>>) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.leaf.push(leaf);
        self.ops.push(op);
        Var(id)
    }

    /// Clears every gradient buffer on the tape.
    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let value = &self.values[loss.0];
        if !value.is_scalar() {
            return Err(Error::InvalidShape {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", value.shape()),
            });
        }
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "backward: non-finite loss {}",
                value.item()
            )));
        }
        for (g, &leaf) in self.grads.iter_mut().zip(&self.leaf) {
            if !leaf {
                *g = None;
            }
        }
        if !self.requires[loss.0] {
            return Ok(());
        }
        match &mut self.grads[loss.0] {
            Some(g) => g[0] += 1.0,
            slot => *slot = Some(vec![1.0]),
        }
        for i in (0..=loss.0).rev() {
            let Some(op) = &self.ops[i] else { continue };
            let (before, rest) = self.grads.split_at_mut(i);
            let Some(out_grad) = rest[0].as_deref() else {
                continue;
            };
            let mut ctx = BackwardCtx {
                values: &self.values,
                requires: &self.requires,
                grads: before,
                out: &self.values[i],
                out_grad,
            };
            op.backward(&mut ctx);
        }
        Ok(())
    }
}
