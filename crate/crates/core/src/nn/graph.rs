//! Tape-style reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already a topological order and [`Graph::backward`] is a
//! single reverse sweep. Ops live in sibling modules as `impl Graph` blocks;
//! each contributes a forward method and a backward arm dispatched from here.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::params::ModelParams;
use crate::nn::shape::ChunkGeometry;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Swish,
    Square,
    /// `sqrt(x + eps)`
    SqrtEps(f64),
    /// `ln(x + eps)`
    LogEps(f64),
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Conv1d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize, cols: Vec<f64> },
    ConvTranspose1d { x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize },
    Depthwise { x: NodeId, w: NodeId, b: Option<NodeId> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, rstd: Vec<f64> },
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, probs: Vec<f64> },
    Unary { x: NodeId, kind: Unary },
    Prelu { x: NodeId, slope: NodeId },
    Glu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    ScaleChannels { x: NodeId, g: NodeId },
    MeanAxis { x: NodeId, axis: usize },
    SumAll { x: NodeId },
    Dot { a: NodeId, b: NodeId },
    L2Normalize { x: NodeId, norm: f64 },
    Permute { x: NodeId, perm: Vec<usize> },
    Reshape { x: NodeId },
    Concat { xs: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    FitLength { x: NodeId },
    Segment { x: NodeId, geom: ChunkGeometry },
    OverlapAdd { x: NodeId, geom: ChunkGeometry },
    SiSnr { est: NodeId, target: Vec<f64>, error: Vec<f64>, clamped: bool, den_target: f64, den_error: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar root with respect to the leaves that need one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    /// Binds a parameter by path; repeated binds of one path share a node.
    pub fn param(&mut self, params: &ModelParams, path: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(path) {
            return Ok(id);
        }
        let value = params.get(path)?.value.clone();
        let id = self.push_leaf(value, true);
        self.params.insert(path.to_string(), id);
        Ok(id)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub(crate) fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub(crate) fn op_probs(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Reverse sweep from a single-element root seeded with 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be a scalar, got shape {:?}", root_value.shape()),
            ));
        }
        self.backward_with(root, Tensor::full(root_value.shape(), 1.0))
    }

    pub fn backward_with(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.shape(root) {
            return Err(Error::shape("backward", "seed shape differs from root"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backward_node(node, &dy, &mut grads)?;
            }
            // interior gradients are dropped once propagated
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(dy);
            }
        }
        Ok(Gradients { grads })
    }

    /// Adds gradients of bound parameter leaves into `params[..].grad`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, params: &mut ModelParams) -> Result<()> {
        for (path, &id) in &self.params {
            if let Some(g) = grads.get(id) {
                let p = params.get_mut(path)?;
                if !g.is_finite() {
                    return Err(Error::NonFinite { op: format!("gradient of `{path}`") });
                }
                p.grad.add_assign(g);
            }
        }
        Ok(())
    }

    pub(crate) fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        use crate::nn::{attention, conv, norm, pointwise, reduce, shape};
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => conv::linear_backward(self, *x, *w, *b, dy, grads),
            Op::Conv1d { x, w, b, stride, cols } => conv::conv1d_backward(self, *x, *w, *b, *stride, cols, dy, grads),
            Op::ConvTranspose1d { x, w, b, stride } => {
                conv::conv_transpose1d_backward(self, *x, *w, *b, *stride, dy, grads)
            }
            Op::Depthwise { x, w, b } => conv::depthwise_backward(self, *x, *w, *b, dy, grads),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                norm::layer_norm_backward(self, *x, *gamma, *beta, xhat, rstd, dy, grads)
            }
            Op::Attention { q, k, v, heads, probs } => {
                attention::attention_backward(self, *q, *k, *v, *heads, probs, dy, grads)
            }
            Op::Unary { x, kind } => pointwise::unary_backward(self, *x, *kind, y, dy, grads),
            Op::Prelu { x, slope } => pointwise::prelu_backward(self, *x, *slope, dy, grads),
            Op::Glu { x } => pointwise::glu_backward(self, *x, dy, grads),
            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, dy.clone());
                let mut neg = dy.clone();
                neg.scale(-1.0);
                self.accumulate(grads, *b, neg);
            }
            Op::Mul { a, b } => pointwise::mul_backward(self, *a, *b, dy, grads),
            Op::Scale { x, c } => {
                let mut g = dy.clone();
                g.scale(*c);
                self.accumulate(grads, *x, g);
            }
            Op::ScaleChannels { x, g } => pointwise::scale_channels_backward(self, *x, *g, dy, grads),
            Op::MeanAxis { x, axis } => reduce::mean_axis_backward(self, *x, *axis, dy, grads),
            Op::SumAll { x } => {
                let g = Tensor::full(self.shape(*x), dy.data()[0]);
                self.accumulate(grads, *x, g);
            }
            Op::Dot { a, b } => reduce::dot_backward(self, *a, *b, dy, grads),
            Op::L2Normalize { x, norm } => reduce::l2_normalize_backward(self, *x, *norm, y, dy, grads),
            Op::Permute { x, perm } => shape::permute_backward(self, *x, perm, dy, grads)?,
            Op::Reshape { x } => {
                let g = dy.clone().reshaped(self.shape(*x))?;
                self.accumulate(grads, *x, g);
            }
            Op::Concat { xs, axis } => shape::concat_backward(self, xs, *axis, dy, grads),
            Op::Slice { x, axis, start } => shape::slice_backward(self, *x, *axis, *start, dy, grads),
            Op::FitLength { x } => shape::fit_length_backward(self, *x, dy, grads),
            Op::Segment { x, geom } => shape::segment_backward(self, *x, geom, dy, grads),
            Op::OverlapAdd { x, geom } => shape::overlap_add_backward(self, *x, geom, dy, grads),
            Op::SiSnr { est, target, error, clamped, den_target, den_error } => reduce::si_snr_backward(
                self,
                *est,
                target,
                error,
                *clamped,
                *den_target,
                *den_error,
                dy,
                grads,
            ),
        }
        Ok(())
    }
}
