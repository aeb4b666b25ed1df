//! Reverse-mode differentiation over a recorded operation graph.
//!
//! A [`Graph`] is an append-only list of nodes. Each node holds its forward
//! value, the operation that produced it, and after [`Graph::backward`] the
//! gradient of the root with respect to it. Parents always precede children,
//! so creation order is a topological order; the backward sweep walks it in
//! reverse and visits every node once. Gradient contributions are added in
//! that fixed order, which keeps repeated runs bitwise identical.

mod backward;
mod ops;

pub use ops::{batch_moments, Axis};

use crate::error::{Error, Result};
use crate::kernels::{PadMode, Padding, Window};
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Abs(Var),
    SmoothAbs(Var, T),
    Sqrt(Var),
    Clamp(Var, T, T),
    Softmax(Var, Axis),
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat(Vec<Var>, Axis),
    Narrow(Var, Axis, usize),
    Upsample(Var, usize),
    Pad(Var, Padding, PadMode),
    Im2col(Var, Window),
    Col2im(Var, Window),
    Conv2d { x: Var, w: Var, b: Option<Var>, win: Window },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, win: Window },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    SpectralNorm { w: Var, u: Vec<T>, v: Vec<T>, sigma: T },
    RowNormalize(Var, T),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    MaskedResidual { x: Var, p: Var, mask: Vec<bool> },
}

impl<T> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Matmul(a, b) => vec![*a, *b],
            AddScalar(a) | MulScalar(a, _) | Relu(a) | LeakyRelu(a, _) | Abs(a) | SmoothAbs(a, _)
            | Sqrt(a) | Clamp(a, _, _) | Softmax(a, _) | Sum(a) | Mean(a) | Transpose(a)
            | Reshape(a) | Narrow(a, _, _) | Upsample(a, _) | Pad(a, _, _) | Im2col(a, _)
            | Col2im(a, _) | RowNormalize(a, _) | GatherRows(a, _) | ScatterRows(a, _) => vec![*a],
            Concat(vs, _) => vs.clone(),
            Conv2d { x, w, b, .. } | ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            SpectralNorm { w, .. } => vec![*w],
            MaskedResidual { x, p, .. } => vec![*x, *p],
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            AddScalar(..) => "add_scalar",
            MulScalar(..) => "mul_scalar",
            Relu(..) => "relu",
            LeakyRelu(..) => "leaky_relu",
            Abs(..) => "abs",
            SmoothAbs(..) => "smooth_abs",
            Sqrt(..) => "sqrt",
            Clamp(..) => "clamp",
            Softmax(..) => "softmax",
            Sum(..) => "sum",
            Mean(..) => "mean",
            Matmul(..) => "matmul",
            Transpose(..) => "transpose",
            Reshape(..) => "reshape",
            Concat(..) => "concat",
            Narrow(..) => "narrow",
            Upsample(..) => "upsample_nearest",
            Pad(..) => "pad",
            Im2col(..) => "im2col",
            Col2im(..) => "col2im",
            Conv2d { .. } => "conv2d",
            ConvTranspose2d { .. } => "conv_transpose2d",
            BatchNorm { .. } => "batch_norm",
            SpectralNorm { .. } => "spectral_norm",
            RowNormalize(..) => "row_normalize",
            GatherRows(..) => "gather_rows",
            ScatterRows(..) => "scatter_rows",
            MaskedResidual { .. } => "masked_residual",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Option<Tensor<T>>,
    pub(crate) requires_grad: bool,
    /// True when this node or any ancestor requires a gradient.
    pub(crate) tracks_grad: bool,
    pub(crate) op: Op<T>,
}

/// Append-only computation graph.
pub struct Graph<T = f32> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Input that is held fixed.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, tracks_grad: requires_grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let tracks_grad = op.parents().iter().any(|p| self.nodes[p.0].tracks_grad);
        self.nodes.push(Node { value, grad: None, requires_grad: false, tracks_grad, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient from the last [`backward`](Self::backward) call, if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient, or zeros of the value's shape when the node was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Computes `∂root/∂node` for every node that tracks gradients.
    ///
    /// The root must be a `1×1×1×1` tensor. Gradients from earlier calls are
    /// discarded; contributions arriving along several paths are summed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if root.0 >= self.nodes.len() {
            return Err(Error::Structural(format!("root {root:?} is not in this graph")));
        }
        let rs = self.shape(root);
        if rs != Shape::scalar() {
            return Err(Error::contract(format!("backward requires a scalar root, got {rs}")));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.op.parents().iter().find(|p| p.0 >= i) {
                return Err(Error::Structural(format!(
                    "node {i} ({}) depends on later node {}: the graph is cyclic",
                    node.op.name(),
                    p.0
                )));
            }
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        pending[root.0] = Some(Tensor::ones(Shape::scalar()));
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].tracks_grad {
                continue;
            }
            let contributions = self.backward_node(i, &g)?;
            self.nodes[i].grad = Some(g);
            for (parent, pg) in contributions {
                if !self.nodes[parent.0].tracks_grad {
                    continue;
                }
                match &mut pending[parent.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += *b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }
}
