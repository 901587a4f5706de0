//! Tape of recorded operations and its reverse sweep.
//!
//! Nodes are appended in creation order, which is a topological order by
//! construction: an operation can only reference nodes that already exist.

use serde::{Deserialize, Serialize};

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative at input `x` with output `y = apply(x)`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Lower clamp applied to probabilities inside the cross-entropy loss.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Act(Var, Activation),
    Concat { a: Var, b: Var, axis: usize },
    Slice { x: Var, axis: usize, start: usize, len: usize },
    Reshape { x: Var, shape: Vec<usize> },
    Conv2d { input: Var, kernels: Var, stride: usize, padding: usize },
    MaxPool2d { input: Var, window: usize, stride: usize },
    Sum(Var),
    Mean(Var),
    SumLastAxis(Var),
    Sqrt(Var),
    Mse { pred: Var, target: Tensor },
    Bce { pred: Var, target: Tensor },
    Contrastive { sq_dist: Var, labels: Tensor, margin: f64 },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::AddBias { x, bias, .. } => vec![x, bias],
            Op::Concat { a, b, .. } => vec![a, b],
            Op::Conv2d { input, kernels, .. } => vec![input, kernels],
            Op::Scale(x, _)
            | Op::Act(x, _)
            | Op::Slice { x, .. }
            | Op::Reshape { x, .. }
            | Op::MaxPool2d { input: x, .. }
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::SumLastAxis(x)
            | Op::Sqrt(x)
            | Op::Mse { pred: x, .. }
            | Op::Bce { pred: x, .. }
            | Op::Contrastive { sq_dist: x, .. } => vec![x],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    /// Argmax positions for max pooling; empty for every other op.
    saved: Vec<usize>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` does not
    /// reach the loss.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// `(outer, dim, inner)` split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(input: &[usize], kernels: &[usize], stride: usize, padding: usize) -> Result<Self> {
        let (batch, c_in, h, w) = match *input {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(dim_err("conv2d", input, kernels)),
        };
        let [c_out, kc, kh, kw] = *kernels else {
            return Err(dim_err("conv2d", input, kernels));
        };
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        if kc != c_in || kh == 0 || kw == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(dim_err("conv2d", input, kernels));
        }
        Ok(Self {
            batch,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel for column row `(c, ki, kj)` at output `(oy, ox)`.
    #[inline]
    fn source(&self, ki: usize, kj: usize, oy: usize, ox: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ki).checked_sub(self.padding)?;
        let x = (ox * self.stride + kj).checked_sub(self.padding)?;
        (y < self.h && x < self.w).then_some((y, x))
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let hw = self.out_hw();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            dst[oy * self.ow + ox] = match self.source(ki, kj, oy, ox) {
                                Some((y, x)) => img[(c * self.h + y) * self.w + x],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], img: &mut [f64]) {
        let hw = self.out_hw();
        for c in 0..self.c_in {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..self.oh {
                        for ox in 0..self.ow {
                            if let Some((y, x)) = self.source(ki, kj, oy, ox) {
                                img[(c * self.h + y) * self.w + x] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn pool_geometry(shape: &[usize], window: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let (planes, h, w) = match *shape {
        [c, h, w] => (c, h, w),
        [n, c, h, w] => (n * c, h, w),
        _ => return Err(dim_err("maxpool2d", shape, &[window, window])),
    };
    if window == 0 || stride == 0 {
        return Err(Error::contract("maxpool2d window and stride must be positive"));
    }
    if window > h || window > w {
        return Err(dim_err("maxpool2d", shape, &[window, window]));
    }
    Ok((planes, h, w, (h - window) / stride + 1, (w - window) / stride + 1))
}

fn compute<'a>(op: &Op, get: &dyn Fn(Var) -> &'a Tensor) -> Result<(Tensor, Vec<usize>)> {
    let plain = |t: Tensor| Ok((t, Vec::new()));
    match op {
        Op::Leaf => unreachable!("leaves are never recomputed"),
        Op::MatMul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
                return Err(dim_err("matmul", a.shape(), b.shape()));
            };
            if k != k2 {
                return Err(dim_err("matmul", a.shape(), b.shape()));
            }
            let mut out = vec![0.0; m * n];
            gemm_nn(a.data(), b.data(), &mut out, m, k, n);
            plain(Tensor::new(vec![m, n], out)?)
        }
        Op::AddBias { x, bias, axis } => {
            let (x, bias) = (get(*x), get(*bias));
            if *axis >= x.rank() || bias.len() != x.shape()[*axis] {
                return Err(dim_err("add_bias", x.shape(), bias.shape()));
            }
            let (_, dim, inner) = axis_split(x.shape(), *axis);
            let mut out = x.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += bias.data()[(i / inner) % dim];
            }
            plain(out)
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.shape() != b.shape() {
                return Err(dim_err("elementwise", a.shape(), b.shape()));
            }
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add(..) => |x, y| x + y,
                Op::Sub(..) => |x, y| x - y,
                _ => |x, y| x * y,
            };
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            plain(Tensor::new(a.shape().to_vec(), data)?)
        }
        Op::Scale(x, c) => plain(get(*x).map(|v| v * c)),
        Op::Act(x, kind) => plain(get(*x).map(|v| kind.apply(v))),
        Op::Concat { a, b, axis } => {
            let (a, b) = (get(*a), get(*b));
            let compatible = a.rank() == b.rank()
                && *axis < a.rank()
                && a.shape()
                    .iter()
                    .zip(b.shape())
                    .enumerate()
                    .all(|(i, (x, y))| i == *axis || x == y);
            if !compatible {
                return Err(dim_err("concat", a.shape(), b.shape()));
            }
            let (outer, da, inner) = axis_split(a.shape(), *axis);
            let db = b.shape()[*axis];
            let mut data = Vec::with_capacity(a.len() + b.len());
            for o in 0..outer {
                data.extend_from_slice(&a.data()[o * da * inner..(o + 1) * da * inner]);
                data.extend_from_slice(&b.data()[o * db * inner..(o + 1) * db * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[*axis] = da + db;
            plain(Tensor::new(shape, data)?)
        }
        Op::Slice { x, axis, start, len } => {
            let x = get(*x);
            if *axis >= x.rank() || start + len > x.shape()[*axis] {
                return Err(dim_err("slice", x.shape(), &[*axis, *start, *len]));
            }
            let (outer, dim, inner) = axis_split(x.shape(), *axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * dim + start) * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = *len;
            plain(Tensor::new(shape, data)?)
        }
        Op::Reshape { x, shape } => plain(get(*x).clone().reshape(shape)?),
        Op::Conv2d {
            input,
            kernels,
            stride,
            padding,
        } => {
            let (input, kernels) = (get(*input), get(*kernels));
            let g = ConvGeom::new(input.shape(), kernels.shape(), *stride, *padding)?;
            let (patch, hw) = (g.patch(), g.out_hw());
            let mut cols = vec![0.0; patch * hw];
            let mut out = vec![0.0; g.batch * g.c_out * hw];
            let in_size = g.c_in * g.h * g.w;
            for s in 0..g.batch {
                g.im2col(&input.data()[s * in_size..(s + 1) * in_size], &mut cols);
                let dst = &mut out[s * g.c_out * hw..(s + 1) * g.c_out * hw];
                gemm_nn(kernels.data(), &cols, dst, g.c_out, patch, hw);
            }
            let shape = if input.rank() == 3 {
                vec![g.c_out, g.oh, g.ow]
            } else {
                vec![g.batch, g.c_out, g.oh, g.ow]
            };
            plain(Tensor::new(shape, out)?)
        }
        Op::MaxPool2d { input, window, stride } => {
            let input = get(*input);
            let (planes, h, w, oh, ow) = pool_geometry(input.shape(), *window, *stride)?;
            let mut out = Vec::with_capacity(planes * oh * ow);
            let mut argmax = Vec::with_capacity(planes * oh * ow);
            for p in 0..planes {
                let plane = &input.data()[p * h * w..(p + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = (oy * stride) * w + ox * stride;
                        for dy in 0..*window {
                            for dx in 0..*window {
                                let idx = (oy * stride + dy) * w + ox * stride + dx;
                                // strict comparison keeps the first maximum in scan order
                                if plane[idx] > plane[best] {
                                    best = idx;
                                }
                            }
                        }
                        out.push(plane[best]);
                        argmax.push(p * h * w + best);
                    }
                }
            }
            let mut shape = input.shape().to_vec();
            let r = shape.len();
            shape[r - 2] = oh;
            shape[r - 1] = ow;
            Ok((Tensor::new(shape, out)?, argmax))
        }
        Op::Sum(x) => plain(Tensor::scalar(get(*x).sum())),
        Op::Mean(x) => plain(Tensor::scalar(get(*x).mean())),
        Op::SumLastAxis(x) => {
            let x = get(*x);
            let Some((&last, lead)) = x.shape().split_last() else {
                return Err(dim_err("sum_last_axis", x.shape(), &[]));
            };
            let data: Vec<f64> = if last == 0 {
                vec![0.0; x.len()]
            } else {
                x.data().chunks_exact(last).map(|r| r.iter().sum()).collect()
            };
            let shape = if lead.is_empty() { vec![1] } else { lead.to_vec() };
            plain(Tensor::new(shape, data)?)
        }
        Op::Sqrt(x) => plain(get(*x).map(f64::sqrt)),
        Op::Mse { pred, target } => {
            let p = get(*pred);
            if p.shape() != target.shape() {
                return Err(dim_err("mse", p.shape(), target.shape()));
            }
            let total: f64 = p
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            plain(Tensor::scalar(total / p.len().max(1) as f64))
        }
        Op::Bce { pred, target } => {
            let p = get(*pred);
            if p.shape() != target.shape() {
                return Err(dim_err("bce", p.shape(), target.shape()));
            }
            let total: f64 = p
                .data()
                .iter()
                .zip(target.data())
                .map(|(&q, &t)| {
                    let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -t * q.ln() - (1.0 - t) * (1.0 - q).ln()
                })
                .sum();
            plain(Tensor::scalar(total / p.len().max(1) as f64))
        }
        Op::Contrastive {
            sq_dist,
            labels,
            margin,
        } => {
            let s = get(*sq_dist);
            if s.shape() != labels.shape() {
                return Err(dim_err("contrastive", s.shape(), labels.shape()));
            }
            let total: f64 = s
                .data()
                .iter()
                .zip(labels.data())
                .map(|(&s, &y)| {
                    let gap = (margin - s.sqrt()).max(0.0);
                    (1.0 - y) * s + y * gap * gap
                })
                .sum();
            plain(Tensor::scalar(total / s.len().max(1) as f64))
        }
    }
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            saved: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, saved) = {
            let nodes = &self.nodes;
            compute(&op, &|v: Var| &nodes[v.0].value)?
        };
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// Adds `bias` along `axis` of `x` (per feature for `[N, F]`, per channel
    /// for `[N, C, H, W]`).
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        self.push(Op::AddBias { x, bias, axis })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.push(Op::Scale(x, factor))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        self.push(Op::Act(x, kind))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        self.push(Op::Concat { a, b, axis })
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice { x, axis, start, len })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    /// Cross-correlation of `[C,H,W]` or `[N,C,H,W]` input with
    /// `[C_out, C_in, kh, kw]` kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        self.push(Op::Conv2d {
            input,
            kernels,
            stride,
            padding,
        })
    }

    pub fn maxpool2d(&mut self, input: Var, window: usize, stride: usize) -> Result<Var> {
        self.push(Op::MaxPool2d { input, window, stride })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Mean(x))
    }

    pub fn sum_last_axis(&mut self, x: Var) -> Result<Var> {
        self.push(Op::SumLastAxis(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.push(Op::Sqrt(x))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        self.push(Op::Mse { pred, target })
    }

    /// Mean binary cross-entropy; predictions are clamped to
    /// `[1e-7, 1 - 1e-7]` and the clamp passes gradients straight through.
    pub fn bce(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        self.push(Op::Bce { pred, target })
    }

    /// Mean contrastive loss over squared distances `s` with labels
    /// `y` (1 = different): `(1-y)·s + y·max(0, margin-√s)²`.
    pub fn contrastive(&mut self, sq_dist: Var, labels: Tensor, margin: f64) -> Result<Var> {
        if margin <= 0.0 {
            return Err(Error::contract("contrastive margin must be positive"));
        }
        self.push(Op::Contrastive {
            sq_dist,
            labels,
            margin,
        })
    }

    /// Recompute every non-leaf node from the stored leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => compute(op, &|v: Var| &values[v.0])?.0,
            };
            values.push(value);
        }
        Ok(values)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|node| match node.op {
                Op::Leaf => node.value.shape().to_vec(),
                _ => Vec::new(),
            })
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, contribution: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(g.data(), val(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(val(*a).data(), g.data(), &mut db, k, m, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Op::AddBias { x, bias, axis } => {
                if self.wants(*bias) {
                    let (_, dim, inner) = axis_split(g.shape(), *axis);
                    let mut db = vec![0.0; dim];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[(i / inner) % dim] += v;
                    }
                    let shape = val(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, db).unwrap());
                }
                self.accumulate(grads, *x, g.clone());
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let times = |t: &Tensor| {
                    let data = g.data().iter().zip(t.data()).map(|(x, y)| x * y).collect();
                    Tensor::new(g.shape().to_vec(), data).unwrap()
                };
                if self.wants(*a) {
                    self.accumulate(grads, *a, times(val(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, times(val(*a)));
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, g.map(|v| v * c)),
            Op::Act(x, kind) => {
                let input = val(*x);
                let data = g
                    .data()
                    .iter()
                    .zip(input.data().iter().zip(node.value.data()))
                    .map(|(&gv, (&xi, &yi))| gv * kind.derivative(xi, yi))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Concat { a, b, axis } => {
                let (outer, da, inner) = axis_split(val(*a).shape(), *axis);
                let db = val(*b).shape()[*axis];
                let mut ga = Vec::with_capacity(outer * da * inner);
                let mut gb = Vec::with_capacity(outer * db * inner);
                for o in 0..outer {
                    let base = o * (da + db) * inner;
                    ga.extend_from_slice(&g.data()[base..base + da * inner]);
                    gb.extend_from_slice(&g.data()[base + da * inner..base + (da + db) * inner]);
                }
                self.accumulate(grads, *a, Tensor::new(val(*a).shape().to_vec(), ga).unwrap());
                self.accumulate(grads, *b, Tensor::new(val(*b).shape().to_vec(), gb).unwrap());
            }
            Op::Slice { x, axis, start, len } => {
                let shape = val(*x).shape();
                let (outer, dim, inner) = axis_split(shape, *axis);
                let mut gx = vec![0.0; val(*x).len()];
                for o in 0..outer {
                    let dst = (o * dim + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                }
                self.accumulate(grads, *x, Tensor::new(shape.to_vec(), gx).unwrap());
            }
            Op::Reshape { x, .. } => {
                let back = g.clone().reshape(val(*x).shape()).unwrap();
                self.accumulate(grads, *x, back);
            }
            Op::Conv2d {
                input,
                kernels,
                stride,
                padding,
            } => {
                let (inp, ker) = (val(*input), val(*kernels));
                let geo = ConvGeom::new(inp.shape(), ker.shape(), *stride, *padding).unwrap();
                let (patch, hw) = (geo.patch(), geo.out_hw());
                let in_size = geo.c_in * geo.h * geo.w;
                let out_size = geo.c_out * hw;
                let mut cols = vec![0.0; patch * hw];
                let mut dcols = vec![0.0; patch * hw];
                let mut dk = vec![0.0; ker.len()];
                let mut dx = vec![0.0; inp.len()];
                let (want_in, want_k) = (self.wants(*input), self.wants(*kernels));
                for s in 0..geo.batch {
                    let gout = &g.data()[s * out_size..(s + 1) * out_size];
                    if want_k {
                        geo.im2col(&inp.data()[s * in_size..(s + 1) * in_size], &mut cols);
                        gemm_nt(gout, &cols, &mut dk, geo.c_out, hw, patch);
                    }
                    if want_in {
                        dcols.iter_mut().for_each(|v| *v = 0.0);
                        gemm_tn(ker.data(), gout, &mut dcols, patch, geo.c_out, hw);
                        geo.col2im_add(&dcols, &mut dx[s * in_size..(s + 1) * in_size]);
                    }
                }
                if want_k {
                    self.accumulate(grads, *kernels, Tensor::new(ker.shape().to_vec(), dk).unwrap());
                }
                if want_in {
                    self.accumulate(grads, *input, Tensor::new(inp.shape().to_vec(), dx).unwrap());
                }
            }
            Op::MaxPool2d { input, .. } => {
                let mut dx = vec![0.0; val(*input).len()];
                for (&src, &gv) in node.saved.iter().zip(g.data()) {
                    dx[src] += gv;
                }
                let shape = val(*input).shape().to_vec();
                self.accumulate(grads, *input, Tensor::new(shape, dx).unwrap());
            }
            Op::Sum(x) => {
                let shape = val(*x).shape();
                self.accumulate(grads, *x, Tensor::full(shape, g.data()[0]));
            }
            Op::Mean(x) => {
                let shape = val(*x).shape();
                let n = val(*x).len().max(1) as f64;
                self.accumulate(grads, *x, Tensor::full(shape, g.data()[0] / n));
            }
            Op::SumLastAxis(x) => {
                let shape = val(*x).shape().to_vec();
                let last = *shape.last().unwrap();
                let mut gx = Vec::with_capacity(val(*x).len());
                for &gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv, last));
                }
                self.accumulate(grads, *x, Tensor::new(shape, gx).unwrap());
            }
            Op::Sqrt(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| if y > 0.0 { gv / (2.0 * y) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Mse { pred, target } => {
                let p = val(*pred);
                let scale = 2.0 * g.data()[0] / p.len().max(1) as f64;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), data).unwrap());
            }
            Op::Bce { pred, target } => {
                let p = val(*pred);
                let scale = g.data()[0] / p.len().max(1) as f64;
                let data = p
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&q, &t)| {
                        let q = q.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        scale * (q - t) / (q * (1.0 - q))
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), data).unwrap());
            }
            Op::Contrastive {
                sq_dist,
                labels,
                margin,
            } => {
                let s = val(*sq_dist);
                let scale = g.data()[0] / s.len().max(1) as f64;
                let data = s
                    .data()
                    .iter()
                    .zip(labels.data())
                    .map(|(&s, &y)| {
                        let e = s.sqrt();
                        // d/ds of max(0, m-√s)²; zero at s = 0 where √s is not differentiable
                        let push = if e > 0.0 && e < *margin { -(margin - e) / e } else { 0.0 };
                        scale * ((1.0 - y) + y * push)
                    })
                    .collect();
                self.accumulate(grads, *sq_dist, Tensor::new(s.shape().to_vec(), data).unwrap());
            }
        }
    }
}
