//! Reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op in execution order together with the
//! values its backward pass needs. Handles into the graph are [`Var`]s.
//! [`Graph::backward`] walks the record in exact reverse order and
//! accumulates gradients into every leaf created with `requires_grad`.
//!
//! There is no implicit broadcasting: binary elementwise ops require equal
//! shapes, and shape coercions go through explicit ops such as
//! [`Graph::broadcast_to`] or [`Graph::reshape`].
//!
//! A graph is meant to live for one forward/backward pass and then be
//! dropped. It is deliberately `!Send` (custom ops box non-`Send` closures).

mod conv;
mod elementwise;
mod linalg;
mod resample;
mod shape;

pub use conv::Padding;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use conv::ConvGeom;
use resample::UpsamplePlan;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward function of a user-defined op: `(inputs, output, grad_output)`
/// to one gradient buffer per input.
pub type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>>>;

pub(crate) enum Op<T: Real> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Log(Var),
    Exp(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Clamp(Var, T, T),
    MatMul(Var, Var),
    Linear(Var, Var, Var),
    Softmax(Var),
    Conv(Var, Var, Box<ConvGeom>),
    BiasAdd(Var, Var),
    MaxPoolTemporal(Var, Vec<usize>),
    Upsample(Var, Box<UpsamplePlan>),
    GradReversal(Var, T),
    Reshape(Var),
    Transpose(Var),
    Concat(Vec<Var>, usize),
    BroadcastTo(Var),
    GlobalAvgPool(Var),
    Sum(Var),
    Mean(Var),
    Custom(Vec<Var>, CustomBackward<T>),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a leaf. Gradients are only accumulated for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Registers an op whose backward is supplied by the caller.
    pub fn custom(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        output: Tensor<T>,
        backward: CustomBackward<T>,
    ) -> Result<Var> {
        self.push(op, output, Op::Custom(inputs.to_vec(), backward))
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs_of(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                expected: sa.to_vec(),
                got: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// Back-propagates from a scalar `loss`, adding into the gradients of
    /// every reachable `requires_grad` leaf. Calling it twice without
    /// [`Graph::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&gout).for_each(|(a, g)| *a = *a + *g),
                    slot => *slot = Some(gout),
                }
                continue;
            }
            let mut sink = Adjoints {
                slots: &mut adj,
                nodes: &self.nodes,
            };
            backward_op(&self.nodes, node, &gout, &mut sink);
        }
        Ok(())
    }
}

pub(crate) struct Adjoints<'a, T: Real> {
    slots: &'a mut [Option<Vec<T>>],
    nodes: &'a [Node<T>],
}

impl<T: Real> Adjoints<'_, T> {
    /// Zero-initialized gradient buffer for `v`, or `None` if `v` does not
    /// need a gradient.
    pub(crate) fn get(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.len();
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if let Some(buf) = self.get(v) {
            buf.iter_mut().zip(g).for_each(|(a, b)| *a = *a + *b);
        }
    }
}

fn inputs_of<T: Real>(op: &Op<T>) -> Vec<Var> {
    use Op::*;
    match op {
        Leaf => vec![],
        Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MatMul(a, b) | Conv(a, b, _) | BiasAdd(a, b) => {
            vec![*a, *b]
        }
        Linear(x, w, b) => vec![*x, *w, *b],
        Scale(x, _) | AddScalar(x) | Log(x) | Exp(x) | Relu(x) | Sigmoid(x) | LogSigmoid(x) | Clamp(x, ..) | Softmax(x)
        | MaxPoolTemporal(x, _) | Upsample(x, _) | GradReversal(x, _) | Reshape(x) | Transpose(x)
        | BroadcastTo(x) | GlobalAvgPool(x) | Sum(x) | Mean(x) => vec![*x],
        Concat(parts, _) => parts.clone(),
        Custom(inputs, _) => inputs.clone(),
    }
}

fn backward_op<T: Real>(nodes: &[Node<T>], node: &Node<T>, gout: &[T], adj: &mut Adjoints<'_, T>) {
    let val = |v: &Var| &nodes[v.0].value;
    let out = &node.value;
    use Op::*;
    match &node.op {
        Leaf => {}
        Add(..) | Sub(..) | Mul(..) | Div(..) | Scale(..) | AddScalar(..) | Log(..) | Exp(..)
        | Relu(..) | Sigmoid(..) | LogSigmoid(..) | Clamp(..) | GradReversal(..) => {
            elementwise::backward(&node.op, &val, out, gout, adj)
        }
        MatMul(a, b) => linalg::matmul_backward(*a, *b, val(a), val(b), gout, adj),
        Linear(x, w, b) => linalg::linear_backward(*x, *w, *b, val(x), val(w), gout, adj),
        Softmax(x) => linalg::softmax_backward(*x, out, gout, adj),
        Conv(x, k, geom) => conv::conv_backward(*x, *k, val(x), val(k), geom, gout, adj),
        BiasAdd(x, b) => conv::bias_add_backward(*x, *b, val(x), gout, adj),
        MaxPoolTemporal(x, argmax) => resample::maxpool_backward(*x, argmax, gout, adj),
        Upsample(x, plan) => resample::upsample_backward(*x, plan, gout, adj),
        Reshape(x) => adj.add(*x, gout),
        Transpose(x) => shape::transpose_backward(*x, val(x), gout, adj),
        Concat(parts, axis) => {
            let shapes: Vec<&[usize]> = parts.iter().map(|p| val(p).shape()).collect();
            shape::concat_backward(parts, &shapes, *axis, out.shape(), gout, adj)
        }
        BroadcastTo(x) => shape::broadcast_backward(*x, val(x).shape(), out.shape(), gout, adj),
        GlobalAvgPool(x) => shape::gap_backward(*x, val(x).shape(), gout, adj),
        Sum(x) => {
            if let Some(buf) = adj.get(*x) {
                buf.iter_mut().for_each(|a| *a = *a + gout[0]);
            }
        }
        Mean(x) => {
            let n = val(x).len();
            let g = gout[0] / T::from_usize(n).unwrap();
            if let Some(buf) = adj.get(*x) {
                buf.iter_mut().for_each(|a| *a = *a + g);
            }
        }
        Custom(inputs, f) => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(val).collect();
            let grads = f(&ins, out, gout);
            for (v, g) in inputs.iter().zip(grads) {
                adj.add(*v, &g);
            }
        }
    }
}
