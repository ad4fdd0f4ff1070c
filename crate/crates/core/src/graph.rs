//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every kernel application in execution order. Nodes are
//! addressed by [`Var`] handles; [`Graph::backward`] walks the tape in exact
//! reverse order and returns gradients for every named parameter and every
//! input registered with [`Graph::input`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::{self, PoolMode};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Kernel kinds, used for fault injection and diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Conv2d,
    Linear,
    MatMul,
    LayerNorm,
    Softmax,
    Pool,
    Relu,
    Sigmoid,
    Gelu,
    Add,
    Mul,
    Scale,
    Reshape,
    Transpose,
    Concat,
    Narrow,
    Upsample,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 20] = [
        OpKind::Leaf,
        OpKind::Conv2d,
        OpKind::Linear,
        OpKind::MatMul,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::Pool,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Gelu,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Concat,
        OpKind::Narrow,
        OpKind::Upsample,
        OpKind::Sum,
        OpKind::CrossEntropy,
    ];

    /// Lower-case identifier, e.g. `layer_norm`.
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Conv2d => "conv2d",
            OpKind::Linear => "linear",
            OpKind::MatMul => "matmul",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Softmax => "softmax",
            OpKind::Pool => "pool",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Gelu => "gelu",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::Concat => "concat",
            OpKind::Narrow => "narrow",
            OpKind::Upsample => "upsample",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Invalid(format!("unknown op kind `{s}`")))
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize, padding: usize },
    Linear { input: Var, weight: Var, bias: Var },
    MatMul { a: Var, b: Var, trans_b: bool },
    LayerNorm { input: Var, gamma: Var, beta: Var, stats: Vec<(f64, f64)> },
    Softmax { input: Var },
    Pool { input: Var, mode: PoolMode, max_index: Vec<usize> },
    Relu { input: Var },
    Sigmoid { input: Var },
    Gelu { input: Var },
    Add { a: Var, b: Var, b_index: Option<Vec<usize>> },
    Mul { a: Var, b: Var, b_index: Option<Vec<usize>> },
    Scale { input: Var, factor: f64 },
    Reshape { input: Var },
    Transpose { input: Var },
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { input: Var, axis: usize, start: usize },
    Upsample { input: Var, factor: usize },
    Sum { input: Var },
    CrossEntropy { logits: Var, labels: Vec<u8>, probs: Tensor, valid: usize },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Linear { .. } => OpKind::Linear,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Pool { .. } => OpKind::Pool,
            Op::Relu { .. } => OpKind::Relu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale { .. } => OpKind::Scale,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::Narrow { .. } => OpKind::Narrow,
            Op::Upsample { .. } => OpKind::Upsample,
            Op::Sum { .. } => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_var: BTreeMap<Var, Tensor>,
}

impl Gradients {
    /// Gradient of a named parameter.
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    /// Gradient of any tracked leaf (parameter or input).
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.by_var.get(&var)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.by_var.is_empty()
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.by_name
    }
}

/// Records kernel applications for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Negates the backward contribution of every `kind` node. Only used to
    /// prove the gradient checker catches a broken kernel.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op kinds in recording order.
    pub fn op_kinds(&self) -> Vec<OpKind> {
        self.nodes.iter().map(|n| n.op.kind()).collect()
    }

    /// Describes the earliest recorded node holding a NaN or infinity, using
    /// the parameter name when the node is one.
    pub fn first_non_finite(&self) -> Option<String> {
        let id = self.nodes.iter().position(|n| !n.value.is_finite())?;
        let named = self.params.iter().find(|(_, v)| v.0 == id).map(|(n, _)| n);
        Some(match named {
            Some(name) => format!("parameter `{name}`"),
            None => format!("node {id} ({:?}, shape {:?})", self.nodes[id].op.kind(), self.nodes[id].value.shape()),
        })
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            op => self.parents(op).iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn parents(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, .. } | Op::Linear { input, weight, bias } => {
                vec![*input, *weight, *bias]
            }
            Op::LayerNorm { input, gamma, beta, .. } => vec![*input, *gamma, *beta],
            Op::MatMul { a, b, .. } | Op::Add { a, b, .. } | Op::Mul { a, b, .. } => vec![*a, *b],
            Op::Softmax { input }
            | Op::Pool { input, .. }
            | Op::Relu { input }
            | Op::Sigmoid { input }
            | Op::Gelu { input }
            | Op::Scale { input, .. }
            | Op::Reshape { input }
            | Op::Transpose { input }
            | Op::Narrow { input, .. }
            | Op::Upsample { input, .. }
            | Op::Sum { input } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// A constant that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value: value.with_requires_grad(true), op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// A named trainable parameter. Registering the same name twice returns
    /// the original node, so shared weights accumulate one gradient.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.input(value.clone());
        self.params.insert(name.to_owned(), v);
        v
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { input, weight, bias, stride, padding }))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }

    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b), trans_b)?;
        Ok(self.push(out, Op::MatMul { a, b, trans_b }))
    }

    pub fn layer_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (out, stats) = ops::layer_norm_with_stats(self.value(input), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(out, Op::LayerNorm { input, gamma, beta, stats }))
    }

    pub fn softmax_rows(&mut self, input: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.value(input))?;
        Ok(self.push(out, Op::Softmax { input }))
    }

    pub fn adaptive_pool(&mut self, input: Var, mode: PoolMode, out_size: &[usize]) -> Result<Var> {
        let (out, max_index) = ops::adaptive_pool_with_index(self.value(input), mode, out_size)?;
        Ok(self.push(out, Op::Pool { input, mode, max_index }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.max(0.0));
        self.push(out, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(ops::sigmoid);
        self.push(out, Op::Sigmoid { input })
    }

    pub fn gelu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(ops::gelu);
        self.push(out, Op::Gelu { input })
    }

    fn broadcast_plan(&self, op: &'static str, a: Var, b: Var) -> Result<Option<Vec<usize>>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(None);
        }
        ops::broadcast_index(sa, sb)
            .map(Some)
            .map_err(|_| Error::dim(op, format!("{sb:?} does not broadcast to {sa:?}")))
    }

    fn binary(&self, a: Var, b: Var, plan: &Option<Vec<usize>>, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = match plan {
            None => ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect(),
            Some(idx) => ta.data().iter().zip(idx).map(|(x, &j)| f(*x, tb.data()[j])).collect(),
        };
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    /// `a + b`, where `b` may broadcast (dims equal or 1) to `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let b_index = self.broadcast_plan("add", a, b)?;
        let out = self.binary(a, b, &b_index, |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b, b_index }))
    }

    /// `a ⊙ b`, where `b` may broadcast (dims equal or 1) to `a`'s shape.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let b_index = self.broadcast_plan("mul", a, b)?;
        let out = self.binary(a, b, &b_index, |x, y| x * y);
        Ok(self.push(out, Op::Mul { a, b, b_index }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let out = self.value(input).map(|v| v * factor);
        self.push(out, Op::Scale { input, factor })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?.with_requires_grad(false);
        Ok(self.push(out, Op::Reshape { input }))
    }

    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let out = self.value(input).transpose2()?;
        Ok(self.push(out, Op::Transpose { input }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&parts, axis)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(input).narrow(axis, start, len)?;
        Ok(self.push(out, Op::Narrow { input, axis, start }))
    }

    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = ops::upsample_nearest(self.value(input), factor)?;
        Ok(self.push(out, Op::Upsample { input, factor }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let out = Tensor::scalar(self.value(input).sum());
        self.push(out, Op::Sum { input })
    }

    /// Mean pixel cross-entropy of `[K,H,W]` logits; label 255 is ignored.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let (loss, probs, valid) = ops::cross_entropy_with_probs(self.value(logits), labels)?;
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs, valid }))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every parameter and input gets an entry; those the loss does not depend
    /// on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(self.shape(loss).to_vec(), vec![1.0]));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut contribs = self.node_backward(node, &g);
            if self.fault == Some(node.op.kind()) {
                for (_, t) in contribs.iter_mut() {
                    t.data_mut().iter_mut().for_each(|v| *v = -*v);
                }
            }
            for (parent, t) in contribs {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(t.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(t),
                }
            }
        }

        let mut out = Gradients::default();
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let g = grads.get_mut(id).and_then(Option::take).unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                out.by_var.insert(Var(id), g);
            }
        }
        for (name, v) in &self.params {
            out.by_name.insert(name.clone(), out.by_var[v].clone());
        }
        Ok(out)
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Vec<(Var, Tensor)> {
        let val = |v: Var| self.value(v);
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias, stride, padding } => {
                let (gx, gw, gb) = ops::conv2d_backward(val(*input), val(*weight), g, *stride, *padding);
                vec![(*input, gx), (*weight, gw), (*bias, gb)]
            }
            Op::Linear { input, weight, bias } => {
                let (gx, gw, gb) = ops::linear_backward(val(*input), val(*weight), g);
                vec![(*input, gx), (*weight, gw), (*bias, gb)]
            }
            Op::MatMul { a, b, trans_b } => {
                let (ga, gb) = ops::matmul_backward(val(*a), val(*b), *trans_b, g);
                vec![(*a, ga), (*b, gb)]
            }
            Op::LayerNorm { input, gamma, beta, stats } => {
                let (gx, gg, gb) = ops::layer_norm_backward(val(*input), val(*gamma), stats, g);
                vec![(*input, gx), (*gamma, gg), (*beta, gb)]
            }
            Op::Softmax { input } => vec![(*input, ops::softmax_rows_backward(&node.value, g))],
            Op::Pool { input, mode, max_index } => vec![(
                *input,
                ops::adaptive_pool_backward(val(*input).shape(), *mode, node.value.shape(), max_index, g),
            )],
            Op::Relu { input } => {
                let x = val(*input);
                vec![(*input, zip_map(x, g, |x, g| if x > 0.0 { g } else { 0.0 }))]
            }
            Op::Sigmoid { input } => {
                vec![(*input, zip_map(&node.value, g, |y, g| g * y * (1.0 - y)))]
            }
            Op::Gelu { input } => vec![(*input, zip_map(val(*input), g, |x, g| g * ops::gelu_grad(x)))],
            Op::Add { a, b, b_index } => {
                let gb = reduce_broadcast(val(*b).shape(), b_index, g.data().iter().copied());
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Mul { a, b, b_index } => {
                let (ta, tb) = (val(*a), val(*b));
                let ga = match b_index {
                    None => zip_map(tb, g, |b, g| b * g),
                    Some(idx) => Tensor::from_parts(
                        ta.shape().to_vec(),
                        g.data().iter().zip(idx).map(|(gv, &j)| gv * tb.data()[j]).collect(),
                    ),
                };
                let gb = reduce_broadcast(tb.shape(), b_index, g.data().iter().zip(ta.data()).map(|(gv, av)| gv * av));
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale { input, factor } => vec![(*input, g.map(|v| v * factor))],
            Op::Reshape { input } => {
                vec![(*input, Tensor::from_parts(val(*input).shape().to_vec(), g.data().to_vec()))]
            }
            Op::Transpose { input } => vec![(*input, g.transpose2().expect("rank-2"))],
            Op::Concat { inputs, axis } => {
                let mut start = 0;
                inputs
                    .iter()
                    .map(|&v| {
                        let len = val(v).shape()[*axis];
                        let part = g.narrow(*axis, start, len).expect("concat backward");
                        start += len;
                        (v, part)
                    })
                    .collect()
            }
            Op::Narrow { input, axis, start } => {
                let shape = val(*input).shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let (dim, len) = (shape[*axis], g.shape()[*axis]);
                let mut gx = vec![0.0; val(*input).len()];
                for o in 0..outer {
                    let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                    let dst = (o * dim + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(src);
                }
                vec![(*input, Tensor::from_parts(shape.to_vec(), gx))]
            }
            Op::Upsample { input, factor } => {
                vec![(*input, ops::upsample_nearest_backward(val(*input).shape(), *factor, g))]
            }
            Op::Sum { input } => vec![(*input, Tensor::full(val(*input).shape(), g.data()[0]))],
            Op::CrossEntropy { logits, labels, probs, valid } => {
                vec![(*logits, ops::cross_entropy_backward(probs, labels, *valid, g.data()[0]))]
            }
        }
    }
}

fn zip_map(a: &Tensor, g: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().zip(g.data()).map(|(x, y)| f(*x, *y)).collect())
}

fn reduce_broadcast(shape: &[usize], index: &Option<Vec<usize>>, vals: impl Iterator<Item = f64>) -> Tensor {
    let n: usize = shape.iter().product();
    let mut out = vec![0.0; n];
    match index {
        None => out.iter_mut().zip(vals).for_each(|(o, v)| *o = v),
        Some(idx) => idx.iter().zip(vals).for_each(|(&j, v)| out[j] += v),
    }
    Tensor::from_parts(shape.to_vec(), out)
}
