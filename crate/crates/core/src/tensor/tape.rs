use std::sync::Arc;

use super::fft::SpatialFilter;
use super::ops::{self, AttnDims, Reduction};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Constant,
    Reshape(Var),
    Transpose(Var),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Filter(Var, Arc<SpatialFilter>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        dims: AttnDims,
        probs: Vec<f64>,
    },
    L1 {
        a: Var,
        b: Var,
        mask: Vec<f64>,
        scale: f64,
    },
    Sum(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Wengert-list reverse-mode tape.
///
/// Nodes are appended in evaluation order, so reverse append order is a
/// valid topological order for backward.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

fn as_matrix(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(TensorError::Shape(format!("expected a matrix, got {shape:?}"))),
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.node(*v).needs_grad)
    }

    /// Records an input. It is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, needs)
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Constant, false)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_parts(n.shape.clone(), n.value.clone())
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = self.node(v);
        if n.value.len() != 1 {
            return Err(TensorError::Shape(format!(
                "expected a scalar, got {:?}",
                n.shape
            )));
        }
        Ok(n.value[0])
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n = self.node(a);
        if shape.iter().product::<usize>() != n.value.len() {
            return Err(TensorError::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                n.shape
            )));
        }
        let (value, needs) = (n.value.clone(), n.needs_grad);
        Ok(self.push(shape, value, Op::Reshape(a), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.shape(a))?;
        let value = ops::transpose_raw(self.data(a), r, c);
        let needs = self.grad_of(&[a]);
        Ok(self.push(vec![c, r], value, Op::Transpose(a), needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.shape(a))?;
        let (k2, n) = as_matrix(self.shape(b))?;
        if k != k2 {
            return Err(TensorError::Shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let value = ops::mm_nn(self.data(a), self.data(b), m, k, n);
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), needs))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape(format!(
                "elementwise operands {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a, b]);
        Ok(self.push(shape, value, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.data(a).iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a]);
        self.push(shape, value, Op::Scale(a, s), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.grad_of(&[a]);
        self.push(shape, value, Op::Tanh(a), needs)
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Shape("concat of nothing".into()));
        };
        let (_, cols) = as_matrix(self.shape(*first))?;
        let mut rows = 0;
        let mut value = Vec::new();
        for p in parts {
            let (r, c) = as_matrix(self.shape(*p))?;
            if c != cols {
                return Err(TensorError::Shape(format!(
                    "concat_rows column mismatch {c} vs {cols}"
                )));
            }
            rows += r;
            value.extend_from_slice(self.data(*p));
        }
        let needs = self.grad_of(parts);
        Ok(self.push(vec![rows, cols], value, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(TensorError::Shape("concat of nothing".into()));
        };
        let (rows, _) = as_matrix(self.shape(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = as_matrix(self.shape(*p))?;
            if r != rows {
                return Err(TensorError::Shape(format!(
                    "concat_cols row mismatch {r} vs {rows}"
                )));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&self.data(*p)[r * w..(r + 1) * w]);
            }
        }
        let needs = self.grad_of(parts);
        Ok(self.push(vec![rows, total], value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Column range `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = as_matrix(self.shape(a))?;
        if start > end || end > cols {
            return Err(TensorError::Shape(format!(
                "column slice {start}..{end} of width {cols}"
            )));
        }
        let src = self.data(a);
        let mut value = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            value.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        let needs = self.grad_of(&[a]);
        Ok(self.push(vec![rows, end - start], value, Op::SliceCols(a, start, end), needs))
    }

    /// Applies a spatial filter to every column of a token-major matrix whose
    /// rows are one or more stacked h×w frames.
    pub fn spatial_filter(&mut self, a: Var, filter: Arc<SpatialFilter>) -> Result<Var> {
        let (rows, cols) = as_matrix(self.shape(a))?;
        let (h, w) = filter.grid();
        if rows % (h * w) != 0 {
            return Err(TensorError::Shape(format!(
                "{rows} tokens are not whole {h}x{w} frames"
            )));
        }
        let value = filter.apply_frames(self.data(a), cols);
        let needs = self.grad_of(&[a]);
        Ok(self.push(vec![rows, cols], value, Op::Filter(a, filter), needs))
    }

    /// Multi-head scaled dot-product attention over column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (nq, d) = as_matrix(self.shape(q))?;
        let (nk, dk) = as_matrix(self.shape(k))?;
        let (nv, dv) = as_matrix(self.shape(v))?;
        if d != dk || nk != nv || nk == 0 {
            return Err(TensorError::Shape(format!(
                "attention shapes Q {:?}, K {:?}, V {:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        if heads == 0 || d % heads != 0 || dv % heads != 0 {
            return Err(TensorError::Shape(format!(
                "{heads} heads do not divide widths {d}/{dv}"
            )));
        }
        let dims = AttnDims { nq, nk, d, dv, heads };
        let needs = self.grad_of(&[q, k, v]);
        let (value, probs) = ops::mha_forward(self.data(q), self.data(k), self.data(v), dims, needs);
        let op = Op::Attention {
            q,
            k,
            v,
            dims,
            probs: probs.unwrap_or_default(),
        };
        Ok(self.push(vec![nq, dv], value, op, needs))
    }

    /// Masked L1 distance. `mask` must match the trailing dims of `a`.
    pub fn l1_loss(&mut self, a: Var, b: Var, mask: &Tensor, reduction: Reduction) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape(format!(
                "l1 operands {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let reps = ops::mask_repeats(self.shape(a), mask.shape())?;
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => {
                let w = mask.sum() * reps as f64;
                if w > 0.0 {
                    1.0 / w
                } else {
                    0.0
                }
            }
        };
        let m = mask.data();
        let total: f64 = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .enumerate()
            .map(|(i, (x, y))| (x - y).abs() * m[i % m.len()])
            .sum();
        let needs = self.grad_of(&[a, b]);
        let op = Op::L1 {
            a,
            b,
            mask: m.to_vec(),
            scale,
        };
        Ok(self.push(vec![1], vec![total * scale], op, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.data(a).iter().sum();
        let needs = self.grad_of(&[a]);
        self.push(vec![1], vec![total], Op::Sum(a), needs)
    }

    /// Gradient of the scalar `loss` with respect to the leaf `wrt`.
    ///
    /// Returns zeros when `wrt` does not influence `loss`.
    pub fn backward(&self, loss: Var, wrt: Var) -> Result<Tensor> {
        let leaf = self.node(wrt);
        if !matches!(leaf.op, Op::Leaf) || !leaf.needs_grad {
            return Err(TensorError::Usage(
                "gradient requested for a value that is not a differentiable leaf".into(),
            ));
        }
        if self.node(loss).value.len() != 1 {
            return Err(TensorError::Usage("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (wrt.0 + 1..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        let g = grads[wrt.0]
            .take()
            .unwrap_or_else(|| vec![0.0; leaf.value.len()]);
        Tensor::new(leaf.shape.clone(), g)
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.node(v).needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Reshape(a) => acc(*a, g.to_vec()),
            Op::Transpose(a) => {
                let (r, c) = (node.shape[0], node.shape[1]);
                acc(*a, ops::transpose_raw(g, r, c));
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.node(*a).shape[0], self.node(*a).shape[1]);
                let n = node.shape[1];
                if self.node(*a).needs_grad {
                    acc(*a, ops::mm_nt(g, &self.node(*b).value, m, n, k));
                }
                if self.node(*b).needs_grad {
                    acc(*b, ops::mm_tn(&self.node(*a).value, g, m, k, n));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.node(*a).value, &self.node(*b).value);
                acc(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                acc(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|x| x * s).collect()),
            Op::Tanh(a) => acc(
                *a,
                g.iter()
                    .zip(&node.value)
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect(),
            ),
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.node(*p).value.len();
                    acc(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                for p in parts {
                    let w = self.node(*p).shape[1];
                    let mut delta = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        delta.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    acc(*p, delta);
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let (rows, cols) = (self.node(*a).shape[0], self.node(*a).shape[1]);
                let width = end - start;
                let mut delta = vec![0.0; rows * cols];
                for r in 0..rows {
                    delta[r * cols + start..r * cols + end]
                        .copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                acc(*a, delta);
            }
            Op::Filter(a, filter) => acc(*a, filter.apply_frames(g, node.shape[1])),
            Op::Attention { q, k, v, dims, probs } => {
                let (dq, dk, dv) = ops::mha_backward(
                    &self.node(*q).value,
                    &self.node(*k).value,
                    &self.node(*v).value,
                    probs,
                    g,
                    *dims,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::L1 { a, b, mask, scale } => {
                let up = g[0] * scale;
                let (av, bv) = (&self.node(*a).value, &self.node(*b).value);
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .enumerate()
                    .map(|(i, (x, y))| up * ops::sign(x - y) * mask[i % mask.len()])
                    .collect();
                if self.node(*b).needs_grad {
                    acc(*b, da.iter().map(|x| -x).collect());
                }
                acc(*a, da);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.node(*a).value.len()]),
        }
    }
}
