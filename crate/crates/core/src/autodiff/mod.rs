//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded operation
//! stores its output value, the handles of its inputs and a
//! [`BackwardOp`] that maps the output gradient onto input gradients.
//! [`Tape::backward`] walks the nodes in reverse recording order and
//! accumulates gradients in that fixed order, so repeated runs produce
//! bit-identical results.
//!
//! ```
//! use canvolve::autodiff::{ops, Tape};
//! use canvolve::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
//! let loss = ops::sum(&mut tape, x).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
//! ```

mod gradcheck;
pub mod ops;

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use gradcheck::{grad_check, grad_check_seeded};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Everything an operation's backward rule may look at.
pub struct BackwardCtx<'a, T> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<T>,
    /// Values of the node's inputs, in recording order.
    pub inputs: Vec<&'a Tensor<T>>,
    /// This node's forward output.
    pub output: &'a Tensor<T>,
    /// Which inputs need a gradient. Rules may return `None` for the others.
    pub needs: Vec<bool>,
}

/// Backward rule of a recorded operation.
pub trait BackwardOp<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one entry per input: the gradient with respect to that input,
    /// or `None` when it was not requested.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    op: Option<Box<dyn BackwardOp<T>>>,
    needs_grad: bool,
}

pub struct Tape<T: Real> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant. Constants never receive gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), None, true)
    }

    /// Records the result of an operation on `inputs`.
    ///
    /// Fails with [`Error::NonFinite`] if `value` holds NaN or infinity.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        inputs: &[Var],
        op: impl BackwardOp<T> + 'static,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let mut idx = Vec::with_capacity(inputs.len());
        let mut needs_grad = false;
        for &v in inputs {
            self.check(v)?;
            needs_grad |= self.nodes[v.index].needs_grad;
            idx.push(v.index);
        }
        Ok(self.push(value, idx, Some(Box::new(op)), needs_grad))
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<usize>,
        op: Option<Box<dyn BackwardOp<T>>>,
        needs_grad: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!("handle {v:?} is not on this tape")));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.try_value(v).expect("variable belongs to a different tape")
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).is_ok() && self.nodes[v.index].needs_grad
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if root.value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.index).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(root.value.shape(), T::one()));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            if !node.needs_grad {
                continue;
            }
            let Some(grad) = grads[i].take() else { continue };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: node.inputs.iter().map(|&j| &self.nodes[j].value).collect(),
                output: &node.value,
                needs: node
                    .inputs
                    .iter()
                    .map(|&j| self.nodes[j].needs_grad)
                    .collect(),
            };
            let input_grads = op.backward(&ctx)?;
            if input_grads.len() != node.inputs.len() {
                return Err(Error::Tape(format!(
                    "`{}` returned {} gradients for {} inputs",
                    op.name(),
                    input_grads.len(),
                    node.inputs.len()
                )));
            }
            for (&j, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[j].needs_grad {
                    continue;
                }
                if g.shape() != self.nodes[j].value.shape() {
                    return Err(Error::Tape(format!(
                        "`{}` produced gradient of shape {:?} for input of shape {:?}",
                        op.name(),
                        g.shape(),
                        self.nodes[j].value.shape()
                    )));
                }
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            // Keep the gradient of leaves and the root only; intermediate
            // gradients are consumed above.
            drop(grad);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes[..=loss.index]
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
            grads,
        })
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T: Real> {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, or `None` if the leaf did not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, with zeros standing in for unreachable leaves.
    pub fn wrt(&self, v: Var) -> Result<Tensor<T>> {
        if v.tape != self.tape {
            return Err(Error::Tape(format!("handle {v:?} is not on this tape")));
        }
        match self.grads.get(v.index) {
            Some(Some(g)) => Ok(g.clone()),
            Some(None) => Ok(Tensor::zeros(&self.shapes[v.index])),
            // Recorded after the loss: cannot have influenced it.
            None => Err(Error::Tape(format!(
                "handle {v:?} was recorded after the loss"
            ))),
        }
    }
}
