use crate::error::{AutogradError, Result};
use crate::ops::conv::ConvGeometry;
use crate::ops::{self};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node, with whatever the backward pass needs.
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
        /// im2col buffer, `[n][c·kh·kw][ho·wo]`; empty when nothing upstream needs a gradient.
        cols: Vec<T>,
    },
    Relu(Var),
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        target: Vec<T>,
        rows: usize,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    ExpandRows(Var),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Conv2d {
                input, kernel, bias, ..
            } => vec![*input, *kernel, *bias],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Reshape(a)
            | Op::ExpandRows(a) => vec![*a],
            Op::MaxPool2d { input, .. } => vec![*input],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    /// True when some leaf upstream requires a gradient.
    pub(crate) needs_grad: bool,
}

/// Record of a forward computation, replayed in reverse by [`Tape::backward`].
///
/// Nodes are appended in creation order, so every node's inputs precede it.
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It is a differentiation target iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.zero_grad();
        let needs_grad = tensor.requires_grad();
        self.push_node(tensor, Op::Leaf, needs_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated adjoint of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Clears every accumulated adjoint on the tape.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutogradError::UnknownNode(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(value, op, needs_grad)
    }

    fn push_node(&mut self, mut value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        value.set_requires_grad(needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Adjoints accumulate into existing gradients, so two calls without
    /// [`Tape::zero_grad`] in between double every gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_traced(loss).map(|_| ())
    }

    /// Like [`Tape::backward`] but returns the nodes visited, in visit order.
    pub fn backward_traced(&mut self, loss: Var) -> Result<Vec<Var>> {
        self.check(loss)?;
        let loss_shape = self.nodes[loss.0].value.shape();
        if !loss_shape.is_scalar() {
            return Err(AutogradError::NonScalarLoss(loss_shape.clone()));
        }
        let mut adjoints: Vec<Option<Vec<T>>> = Vec::new();
        adjoints.resize_with(loss.0 + 1, || None);
        adjoints[loss.0] = Some(vec![T::one()]);
        let mut visited = Vec::new();

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adjoints[id].take() else { continue };
            visited.push(Var(id));
            debug_assert!(node.op.inputs().iter().all(|v| v.0 < id));
            ops::backward(&self.nodes, id, &g, &mut adjoints);
            adjoints[id] = Some(g);
        }

        for (id, adj) in adjoints.into_iter().enumerate() {
            if let Some(g) = adj {
                if self.nodes[id].needs_grad {
                    self.nodes[id].value.accumulate_grad(&g)?;
                }
            }
        }
        Ok(visited)
    }

    /// Inputs of a node, for inspection and tape-order checks.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }
}

/// Adds `delta(slot)` into the adjoint of `target`, allocating it on first use.
pub(crate) fn accumulate<T: Scalar>(
    adjoints: &mut [Option<Vec<T>>],
    target: Var,
    len: usize,
    f: impl FnOnce(&mut [T]),
) {
    let slot = adjoints[target.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}
