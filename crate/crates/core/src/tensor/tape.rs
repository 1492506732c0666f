//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node holding its forward value and whatever it
//! needs for the backward pass. Nodes only reference earlier nodes, so the
//! tape order is already a topological order and `backward` is a single
//! reverse sweep.

use std::sync::Arc;

use super::kernels;
use super::sparse::SparseMatrix;
use super::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Spmm {
        matrix: Arc<SparseMatrix<T>>,
        x: Var,
    },
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradient tape. Values are immutable once recorded.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
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

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// d loss / d v after [`Tape::backward`]. Leaves that require grad but do
    /// not influence the loss get an all-zero gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(value.shape().iter().product::<usize>(), value.numel());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- forward ops -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims("matmul")?;
        let (k2, n) = self.value(b).matrix_dims("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// a · bᵀ without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims("matmul_nt")?;
        let (n, k2) = self.value(b).matrix_dims("matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(t, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// x[n×d] + row[d], the row broadcast over every row of x.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (n, d) = self.value(x).matrix_dims("add_row")?;
        if self.value(row).numel() != d {
            return Err(shape_err("add_row", self.value(x).shape(), self.value(row).shape()));
        }
        let b = self.value(row).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..n {
            for (o, &bv) in out[r * d..(r + 1) * d].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_grad(&[x, row]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Scale(x, factor), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Relu(x), rg))
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).matrix_dims("softmax_rows")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            softmax_into(&src[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::SoftmaxRows(x), rg))
    }

    /// Per-row standardization over the last axis followed by the affine map
    /// `gamma * xhat + beta`. Variance is the biased (1/d) estimator.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (n, d) = self.value(x).matrix_dims("layer_norm")?;
        if d == 0 || !(eps > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "layer_norm needs d >= 1 and eps > 0 (d = {d}, eps = {eps})"
            )));
        }
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(shape_err("layer_norm", self.value(x).shape(), self.value(gamma).shape()));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let dt = T::of(d as f64);
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = g[c] * h + b[c];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        if n == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let s = self.value(x).sum() / T::of(n as f64);
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = self.value(x).matrix_dims("slice_rows")?;
        if start > end || end > n {
            return Err(Error::InvalidArgument(format!(
                "row slice {start}..{end} out of bounds for {n} rows"
            )));
        }
        let data = self.value(x).data()[start * d..end * d].to_vec();
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![end - start, d], data)?,
            Op::SliceRows { x, start },
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_rows of nothing".into()))?;
        let d = self.value(first).matrix_dims("concat_rows")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).matrix_dims("concat_rows")?;
            if c != d {
                return Err(shape_err("concat_rows", self.value(first).shape(), self.value(p).shape()));
            }
            data.extend_from_slice(self.value(p).data());
            rows += r;
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(vec![rows, d], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let n = self.value(first).matrix_dims("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).matrix_dims("concat_cols")?;
            if r != n {
                return Err(shape_err("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor::new(vec![n, total], data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Constant sparse matrix times a tracked dense matrix.
    pub fn spmm(&mut self, matrix: &Arc<SparseMatrix<T>>, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).matrix_dims("spmm")?;
        if matrix.cols() != n {
            return Err(shape_err("spmm", &[matrix.rows(), matrix.cols()], self.value(x).shape()));
        }
        let mut out = vec![T::zero(); matrix.rows() * d];
        matrix.spmm_acc(self.value(x).data(), d, &mut out);
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![matrix.rows(), d], out)?,
            Op::Spmm {
                matrix: Arc::clone(matrix),
                x,
            },
            rg,
        ))
    }

    /// Output row i is input row `index[i]`; repeated indices allowed.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (n, d) = self.value(x).matrix_dims("gather_rows")?;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * d);
        for &i in index {
            if i >= n {
                return Err(Error::InvalidArgument(format!("gather index {i} >= {n}")));
            }
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(vec![index.len(), d], data)?,
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `logits[n×c]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).matrix_dims("softmax_cross_entropy")?;
        if targets.len() != n || n == 0 {
            return Err(shape_err("softmax_cross_entropy", self.value(logits).shape(), &[targets.len()]));
        }
        let src = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut loss = T::zero();
        for i in 0..n {
            let t = targets[i];
            if t >= c {
                return Err(Error::InvalidArgument(format!("class {t} out of range for {c} logits")));
            }
            let row = &src[i * c..(i + 1) * c];
            softmax_into(row, &mut probs[i * c..(i + 1) * c]);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            loss += lse - row[t];
        }
        loss /= T::of(n as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy on raw logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let x = self.value(logits).data();
        if x.len() != targets.len() || x.is_empty() {
            return Err(shape_err("bce_with_logits", self.value(logits).shape(), &[targets.len()]));
        }
        let loss = x
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln())
            .sum::<T>()
            / T::of(x.len() as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target of the same size.
    pub fn mse(&mut self, pred: Var, target: &[T]) -> Result<Var> {
        let p = self.value(pred).data();
        if p.len() != target.len() || p.is_empty() {
            return Err(shape_err("mse", self.value(pred).shape(), &[target.len()]));
        }
        let loss = p
            .iter()
            .zip(target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / T::of(p.len() as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
            rg,
        ))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    // ---- backward ----------------------------------------------------------

    /// Accumulates d loss / d node for every node that requires grad.
    ///
    /// Any previous gradients are discarded first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        self.grads = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            let shape = self.value(loss).shape().to_vec();
            self.grads[loss.0] = Some(Tensor::full(&shape, T::one()));
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, g.data());
            self.grads[i] = Some(g);
        }

        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grad.is_none() {
                *grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Ops only reference earlier nodes; node i's op is moved out so the
        // node values can be read while gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims(&nodes[a.0].value);
                let n = nodes[b.0].value.cols();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    kernels::matmul_nt_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    kernels::matmul_tn_acc(av, g, gb, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (m, k) = dims(&nodes[a.0].value);
                let n = nodes[b.0].value.rows();
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    kernels::matmul_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    kernels::matmul_tn_acc(g, av, gb, m, n, k);
                }
            }
            Op::Transpose(a) => {
                let (r, c) = dims(&nodes[a.0].value);
                // g is c×r
                let gt = kernels::transpose(g, c, r);
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, &gt);
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    add_into(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = acc(nodes, grads, *a) {
                    add_into(ga, g);
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::AddRow(x, row) => {
                let d = nodes[row.0].value.numel();
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(gx, g);
                }
                if let Some(gr) = acc(nodes, grads, *row) {
                    for chunk in g.chunks(d) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = acc(nodes, grads, *a) {
                    for ((o, &gv), &y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if let Some(gb) = acc(nodes, grads, *b) {
                    for ((o, &gv), &x) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(x, f) => {
                let f = *f;
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (o, &gv) in gx.iter_mut().zip(g) {
                        *o += gv * f;
                    }
                }
            }
            Op::Relu(x) => {
                // Subgradient 0 at exactly 0.
                let xv = nodes[x.0].value.data();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((o, &gv), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *o += gv;
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let y = nodes[i].value.data();
                let c = nodes[i].value.cols();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for ((gx_r, g_r), y_r) in gx.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: T = g_r.iter().zip(y_r).map(|(&a, &b)| a * b).sum();
                        for ((o, &gv), &yv) in gx_r.iter_mut().zip(g_r).zip(y_r) {
                            *o += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = nodes[x.0].value.cols();
                let gam = nodes[gamma.0].value.data();
                if let Some(gg) = acc(nodes, grads, *gamma) {
                    for (g_r, h_r) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, &gv), &h) in gg.iter_mut().zip(g_r).zip(h_r) {
                            *o += gv * h;
                        }
                    }
                }
                if let Some(gb) = acc(nodes, grads, *beta) {
                    for g_r in g.chunks(d) {
                        add_into(gb, g_r);
                    }
                }
                let dt = T::of(d as f64);
                if let Some(gx) = acc(nodes, grads, *x) {
                    let mut dh = vec![T::zero(); d];
                    for (r, (g_r, h_r)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        for c in 0..d {
                            dh[c] = g_r[c] * gam[c];
                        }
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dh_h: T = dh.iter().zip(h_r).map(|(&a, &b)| a * b).sum();
                        let scale = inv_std[r] / dt;
                        for c in 0..d {
                            gx[r * d + c] += scale * (dt * dh[c] - sum_dh - h_r[c] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let g0 = g[0];
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g0;
                    }
                }
            }
            Op::Mean(x) => {
                let n = nodes[x.0].value.numel();
                let g0 = g[0] / T::of(n as f64);
                if let Some(gx) = acc(nodes, grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g0;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let d = nodes[x.0].value.cols();
                let off = start * d;
                if let Some(gx) = acc(nodes, grads, *x) {
                    add_into(&mut gx[off..off + g.len()], g);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = nodes[p.0].value.numel();
                    if let Some(gp) = acc(nodes, grads, *p) {
                        add_into(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let total = nodes[i].value.cols();
                let mut col = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(gp) = acc(nodes, grads, *p) {
                        for (r, gp_r) in gp.chunks_mut(w).enumerate() {
                            add_into(gp_r, &g[r * total + col..r * total + col + w]);
                        }
                    }
                    col += w;
                }
            }
            Op::Spmm { matrix, x } => {
                let d = nodes[x.0].value.cols();
                if let Some(gx) = acc(nodes, grads, *x) {
                    matrix.spmm_t_acc(g, d, gx);
                }
            }
            Op::GatherRows { x, index } => {
                let d = nodes[x.0].value.cols();
                if let Some(gx) = acc(nodes, grads, *x) {
                    for (r, &src) in index.iter().enumerate() {
                        add_into(&mut gx[src * d..(src + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                let c = probs.len() / n;
                let s = g[0] / T::of(n as f64);
                if let Some(gl) = acc(nodes, grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for k in 0..c {
                            let onehot = if k == t { T::one() } else { T::zero() };
                            gl[r * c + k] += s * (probs[r * c + k] - onehot);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let x = nodes[logits.0].value.data();
                let s = g[0] / T::of(x.len() as f64);
                if let Some(gl) = acc(nodes, grads, *logits) {
                    for ((o, &z), &y) in gl.iter_mut().zip(x).zip(targets) {
                        *o += s * (sigmoid(z) - y);
                    }
                }
            }
            Op::Mse { pred, target } => {
                let p = nodes[pred.0].value.data();
                let s = g[0] * T::of(2.0) / T::of(p.len() as f64);
                if let Some(gp) = acc(nodes, grads, *pred) {
                    for ((o, &a), &b) in gp.iter_mut().zip(p).zip(target) {
                        *o += s * (a - b);
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}

fn acc<'a, T: Scalar>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(node.value.shape()));
    }
    slot.as_mut().map(Tensor::data_mut)
}

fn dims<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn softmax_into<T: Scalar>(row: &[T], out: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
