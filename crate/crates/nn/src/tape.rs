//! The recording tape: an append-only list of ops with parent references.
//! Backward walks it once in reverse recording order.

use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::TensorData;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("{0}")]
    Invalid(String),
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("unknown parameter: {0}")]
    UnknownParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Single-output op with a hand-written vector-Jacobian product. Used to
/// splice the renderer and the geometric losses into the tape.
pub trait CustomOp<S: Scalar> {
    /// Given the gradient of the loss w.r.t. this op's output and the input
    /// values, return per-input gradients (None for inputs without gradient).
    fn backward(&self, out_grad: &TensorData<S>, inputs: &[&TensorData<S>])
        -> Vec<Option<TensorData<S>>>;
}

pub(crate) struct Node<S: Scalar> {
    pub value: TensorData<S>,
    pub op: Op<S>,
    pub requires_grad: bool,
}

pub struct Tape<S: Scalar> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub(crate) fn push(&mut self, value: TensorData<S>, op: Op<S>, requires_grad: bool) -> TensorId {
        self.nodes.push(Node { value, op, requires_grad });
        TensorId(self.nodes.len() - 1)
    }

    /// Records a leaf value. Gradients are only materialized for leaves with
    /// `requires_grad` and everything downstream of them.
    pub fn leaf(&mut self, value: TensorData<S>, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: TensorData<S>) -> TensorId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, v: S) -> TensorId {
        self.constant(TensorData::scalar(v))
    }

    pub fn value(&self, id: TensorId) -> &TensorData<S> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Reverse pass from a scalar target; returns per-node gradients indexed
    /// by `TensorId` (None where no gradient flows or none is required).
    pub fn backward(&self, target: TensorId) -> Result<Gradients<S>, NnError> {
        if !self.value(target).is_scalar() {
            return Err(NnError::Invalid("backward target must be a scalar".into()));
        }
        self.backward_seeded(target, TensorData::scalar(S::one()))
    }

    pub fn backward_seeded(
        &self,
        target: TensorId,
        seed: TensorData<S>,
    ) -> Result<Gradients<S>, NnError> {
        if seed.shape != self.value(target).shape && seed.len() != self.value(target).len() {
            return Err(NnError::ShapeMismatch {
                expected: format!("{:?}", self.value(target).shape),
                got: format!("{:?}", seed.shape),
            });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[target.0] = Some(seed.values);
        for idx in (0..=target.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let grad = grads[idx].take().unwrap();
            crate::ops::backward_op(self, idx, &grad, &mut grads);
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: TensorId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `id`, zeros if none flowed.
    pub fn get_or_zeros(&self, id: TensorId, len: usize) -> Vec<S> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![S::zero(); len],
        }
    }
}

pub(crate) fn accumulate_into<S: Scalar>(
    grads: &mut Vec<Option<Vec<S>>>,
    id: TensorId,
    contrib: Vec<S>,
) {
    let slot = &mut grads[id.0];
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(&contrib) {
                *a = *a + *b;
            }
        }
        None => *slot = Some(contrib),
    }
}
