//! Reverse-mode tape over 2-D tensors.

use crate::autodiff::tensor::Tensor;
use crate::constraint::squash_scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`.
    MatMulNT(NodeId, NodeId),
    Transpose(NodeId),
    /// `[r, c] + [1, c]` broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Tanh(NodeId),
    LeakyRelu(NodeId, f64),
    Sin(NodeId),
    Cos(NodeId),
    /// Gradient taken as 0 where the output is 0.
    Sqrt(NodeId),
    Square(NodeId),
    /// `[r, c] → [r, 1]`.
    SumCols(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SliceCols(NodeId, usize, usize),
    ConcatCols(Vec<NodeId>),
    /// Per-column `min + (1 + tanh x)(max − min)/2`.
    Squash(NodeId, Vec<(f64, f64)>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::Transpose(..) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::SumCols(..) => "sum_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Squash(..) => "squash",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Tanh(a)
            | Op::LeakyRelu(a, _)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Sqrt(a)
            | Op::Square(a)
            | Op::SumCols(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SliceCols(a, _, _)
            | Op::Squash(a, _) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Nodes in creation order; inputs always precede the nodes that use them.
#[derive(Debug, Clone, Default)]
pub struct TapeGraph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `id`, or zeros shaped like `like` when nothing flowed into it.
    pub fn wrt(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

impl TapeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, false)
    }

    fn push_raw(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.push_raw(op, value, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(Op::MatMulNT(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v)
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_row(self.value(bias))?;
        Ok(self.push(Op::AddBias(a, bias), v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a).map(|x| k * x);
        self.push(Op::Scale(a, k), v)
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a, c), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.value(a).map(|x| leaky(x, slope));
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sin);
        self.push(Op::Sin(a), v)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::cos);
        self.push(Op::Cos(a), v)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_cols();
        self.push(Op::SumCols(a), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(Op::Mean(a), v)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(Op::SliceCols(a, start, len), v))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of nothing"));
        }
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&values)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), v))
    }

    pub fn squash(&mut self, a: NodeId, bounds: Vec<(f64, f64)>) -> Result<NodeId> {
        let x = self.value(a);
        if bounds.len() != x.cols() {
            return Err(Error::shape("squash", &x.shape(), &[bounds.len()]));
        }
        let v = Tensor::from_fn(x.rows(), x.cols(), |i, j| {
            squash_scalar(x.get(i, j), bounds[j].0, bounds[j].1)
        });
        Ok(self.push(Op::Squash(a, bounds), v))
    }

    /// Reverse sweep from a 1×1 output.
    pub fn backward(&self, out: NodeId) -> Result<Gradients> {
        let shape = self.shape(out);
        if shape != [1, 1] {
            return Err(Error::invalid(format!(
                "backward needs a scalar output, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(val(*b))?);
                }
                if wants(*b) {
                    self.accumulate(grads, *b, val(*a).matmul_tn(g)?);
                }
            }
            Op::MatMulNT(a, b) => {
                if wants(*a) {
                    self.accumulate(grads, *a, g.matmul(val(*b))?);
                }
                if wants(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(val(*a))?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::AddBias(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if wants(*b) {
                    self.accumulate(grads, *b, g.sum_rows());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if wants(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), "mul'", |x, y| x * y)?);
                }
                if wants(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), "mul'", |x, y| x * y)?);
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if wants(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, "div'", |x, y| x / y)?);
                }
                if wants(*b) {
                    // d(a/b)/db = −(a/b)/b
                    let q = node.value.zip_map(bv, "div'", |y, d| -y / d)?;
                    self.accumulate(grads, *b, g.zip_map(&q, "div'", |x, y| x * y)?);
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| k * x)),
            Op::Offset(a, _) => self.accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, "tanh'", |x, y| x * (1.0 - y * y))?;
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.zip_map(val(*a), "leaky_relu'", |x, v| x * leaky_slope(v, *slope))?;
                self.accumulate(grads, *a, d);
            }
            Op::Sin(a) => {
                let d = g.zip_map(val(*a), "sin'", |x, v| x * v.cos())?;
                self.accumulate(grads, *a, d);
            }
            Op::Cos(a) => {
                let d = g.zip_map(val(*a), "cos'", |x, v| -x * v.sin())?;
                self.accumulate(grads, *a, d);
            }
            Op::Sqrt(a) => {
                let d = g.zip_map(&node.value, "sqrt'", |x, y| {
                    if y == 0.0 {
                        0.0
                    } else {
                        x / (2.0 * y)
                    }
                })?;
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = g.zip_map(val(*a), "square'", |x, v| 2.0 * v * x)?;
                self.accumulate(grads, *a, d);
            }
            Op::SumCols(a) => {
                let av = val(*a);
                let d = Tensor::from_fn(av.rows(), av.cols(), |i, _| g.get(i, 0));
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let av = val(*a);
                self.accumulate(grads, *a, Tensor::full(av.rows(), av.cols(), g.item()));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let n = av.len() as f64;
                self.accumulate(grads, *a, Tensor::full(av.rows(), av.cols(), g.item() / n));
            }
            Op::SliceCols(a, start, len) => {
                let av = val(*a);
                let (start, end) = (*start, start + len);
                let d = Tensor::from_fn(av.rows(), av.cols(), |i, j| {
                    if j >= start && j < end {
                        g.get(i, j - start)
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        self.accumulate(grads, p, g.slice_cols(start, w)?);
                    }
                    start += w;
                }
            }
            Op::Squash(a, bounds) => {
                let av = val(*a);
                let d = Tensor::from_fn(av.rows(), av.cols(), |i, j| {
                    let t = av.get(i, j).tanh();
                    let (lo, hi) = bounds[j];
                    g.get(i, j) * (hi - lo) * 0.5 * (1.0 - t * t)
                });
                self.accumulate(grads, *a, d);
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub(crate) fn leaky_slope(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let mut t = TapeGraph::new();
        let x = t.param(Tensor::from_fn(3, 4, |i, j| (i as f64) - 0.3 * j as f64));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &Tensor::ones(3, 4));
    }

    #[test]
    fn tanh_slope_at_zero() {
        let mut t = TapeGraph::new();
        let x = t.param(Tensor::scalar(0.0));
        let y = t.tanh(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 1.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = TapeGraph::new();
        let x = t.param(Tensor::zeros(2, 1));
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        // f = Σ (x·x + x) → df/dx = 2x + 1
        let mut t = TapeGraph::new();
        let x = t.param(Tensor::new(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let y = t.add(sq, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = TapeGraph::new();
        let c = t.constant(Tensor::ones(2, 2));
        let x = t.param(Tensor::ones(2, 2));
        let y = t.mul(c, x).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(x).is_some());
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let mut t = TapeGraph::new();
        let x = t.param(Tensor::new(1, 2, vec![0.0, 4.0]).unwrap());
        let y = t.sqrt(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.25]);
    }
}
