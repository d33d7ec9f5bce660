//! Define-by-run reverse-mode differentiation.
//!
//! Every op appends a node holding its output and whatever it needs for the
//! backward rule. [`Tape::backward`] walks the nodes in exact reverse order
//! and leaves the tape untouched, so it can be replayed.

use super::kernels;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNt { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    Columns { x: Var, start: usize },
    ConcatColumns { parts: Vec<Var> },
    Rows { x: Var, start: usize },
    ConcatRows { parts: Vec<Var> },
    SoftmaxRows { x: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu { x: Var },
    Attention {
        qkv: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        row_weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::MatMulNt { .. } => "matmul_nt",
            Op::Transpose { .. } => "transpose",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::Columns { .. } => "columns",
            Op::ConcatColumns { .. } => "concat_columns",
            Op::Rows { .. } => "rows",
            Op::ConcatRows { .. } => "concat_rows",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu { .. } => "gelu",
            Op::Attention { .. } => "attention",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, if `var` requires one.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn check_finite(op: &Op, data: &[f64]) {
    debug_assert!(
        data.iter().all(|x| x.is_finite()),
        "non-finite value produced by {}",
        op.name()
    );
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `x·Φ(x)` with the exact Gaussian CDF.
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

fn softmax_row_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        total += *o;
    }
    let inv = 1.0 / total;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Copies columns `start..start + width` of a row-major `rows × cols` matrix.
fn head_slice(x: &[f64], rows: usize, cols: usize, start: usize, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * width);
    for row in x.chunks(cols) {
        out.extend_from_slice(&row[start..start + width]);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        check_finite(&op, &data);
        let requires_grad = inputs.iter().any(|&v| self.requires(v));
        let value = Tensor::new(shape, data).expect("op produced a consistent shape");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix_dims(&self, var: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        let shape = self.value(var).shape();
        if shape.len() != 2 {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                shape: shape.to_vec(),
            });
        }
        Ok((shape[0], shape[1]))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.value(a).shape().to_vec(),
            right: self.value(b).shape().to_vec(),
        }
    }

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims(a, "matmul")?;
        let (k2, n) = self.matrix_dims(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(vec![m, n], data, Op::MatMul { a, b }, &[a, b]))
    }

    /// `a[m×k] · b[n×k]ᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims(a, "matmul_nt")?;
        let (n, k2) = self.matrix_dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let data = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(vec![m, n], data, Op::MatMulNt { a, b }, &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims(x, "transpose")?;
        let data = kernels::transpose(self.value(x).data(), r, c);
        Ok(self.push(vec![c, r], data, Op::Transpose { x }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("add", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(shape, data, Op::Add { a, b }, &[a, b]))
    }

    /// Adds a length-`d` vector to every row of an `n×d` matrix.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (_, d) = self.value(x).dims2();
        if self.value(bias).numel() != d {
            return Err(self.mismatch("add_row", x, bias));
        }
        let b = self.value(bias).data();
        let data = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(shape, data, Op::AddRow { x, bias }, &[x, bias]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(shape, data, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.value(x).data().iter().map(|v| v * factor).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(shape, data, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(vec![1], vec![total], Op::Sum { x }, &[x])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.matrix_dims(x, "columns")?;
        if len == 0 || start + len > cols {
            return Err(TensorError::OutOfRange {
                op: "columns",
                start,
                len,
                extent: cols,
            });
        }
        let data = self
            .value(x)
            .data()
            .chunks(cols)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Ok(self.push(vec![rows, len], data, Op::Columns { x, start }, &[x]))
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_columns"))?;
        let (rows, _) = self.matrix_dims(first, "concat_columns")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims(p, "concat_columns")?;
            if r != rows {
                return Err(self.mismatch("concat_columns", first, p));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(
            vec![rows, total],
            data,
            Op::ConcatColumns {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Rows `start..start + len` of a matrix.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = self.matrix_dims(x, "rows")?;
        if len == 0 || start + len > rows {
            return Err(TensorError::OutOfRange {
                op: "rows",
                start,
                len,
                extent: rows,
            });
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        Ok(self.push(vec![len, cols], data, Op::Rows { x, start }, &[x]))
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat_rows"))?;
        let (_, cols) = self.value(first).dims2();
        let mut total_rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if c != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            total_rows += r;
        }
        let mut data = Vec::with_capacity(total_rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            vec![total_rows, cols],
            data,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let (_, cols) = self.value(x).dims2();
        let mut data = vec![0.0; self.value(x).numel()];
        for (row, out) in self.value(x).data().chunks(cols).zip(data.chunks_mut(cols)) {
            softmax_row_into(row, out);
        }
        let shape = self.value(x).shape().to_vec();
        self.push(shape, data, Op::SoftmaxRows { x }, &[x])
    }

    /// Per-row `(x − mean)/sqrt(var + eps)` followed by elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let (rows, d) = self.value(x).dims2();
        if self.value(gain).numel() != d {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        if self.value(bias).numel() != d {
            return Err(self.mismatch("layer_norm", x, bias));
        }
        let mut normalized = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for (i, row) in self.value(x).data().chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for (o, v) in normalized[i * d..(i + 1) * d].iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let data = normalized
            .chunks(d)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((v, gv), bv)| v * gv + bv))
            .collect();
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            shape,
            data,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Scaled dot-product attention for `heads` heads read from a fused
    /// `[n × 3d]` projection laid out as `[Q | K | V]`, each block split into
    /// contiguous `d/heads`-wide head slices. Returns the `[n × d]`
    /// concatenation of `softmax(Q_h·K_hᵀ/√d_k)·V_h` over heads.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Result<Var, TensorError> {
        let (n, three_d) = self.matrix_dims(qkv, "attention")?;
        if heads == 0 || three_d % (3 * heads) != 0 {
            return Err(TensorError::InvalidShape {
                shape: vec![n, three_d, heads],
            });
        }
        let d = three_d / 3;
        let dk = d / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let x = self.value(qkv).data();
        let mut out = vec![0.0; n * d];
        let mut probs = vec![0.0; heads * n * n];
        for h in 0..heads {
            let q = head_slice(x, n, three_d, h * dk, dk);
            let k = head_slice(x, n, three_d, d + h * dk, dk);
            let v = head_slice(x, n, three_d, 2 * d + h * dk, dk);
            let scores = kernels::matmul_nt(&q, &k, n, dk, n);
            let a = &mut probs[h * n * n..(h + 1) * n * n];
            for (row, dst) in scores.chunks(n).zip(a.chunks_mut(n)) {
                let scaled: Vec<f64> = row.iter().map(|s| s * scale).collect();
                softmax_row_into(&scaled, dst);
            }
            let o = kernels::matmul(a, &v, n, n, dk);
            for (i, row) in o.chunks(dk).enumerate() {
                out[i * d + h * dk..i * d + (h + 1) * dk].copy_from_slice(row);
            }
        }
        Ok(self.push(vec![n, d], out, Op::Attention { qkv, heads, probs }, &[qkv]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let data = self.value(x).data().iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(shape, data, Op::Gelu { x }, &[x])
    }

    /// Mean over rows of `−log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let rows = self.value(logits).dims2().0;
        self.weighted_cross_entropy(logits, labels, &vec![1.0; rows])
    }

    /// Cross entropy where row `i` contributes `row_weights[i]·CE_i / n`.
    pub fn weighted_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        row_weights: &[f64],
    ) -> Result<Var, TensorError> {
        let (rows, classes) = self.value(logits).dims2();
        if labels.len() != rows || row_weights.len() != rows {
            return Err(TensorError::LabelCount {
                rows,
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for (i, row) in self.value(logits).data().chunks(classes).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_total = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += row_weights[i] * (log_total - (row[labels[i]] - max));
            softmax_row_into(row, &mut probs[i * classes..(i + 1) * classes]);
        }
        loss /= rows as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                row_weights: row_weights.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Returns a gradient for every node that requires one. The tape is not
    /// consumed; calling this twice gives bit-identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.requires(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad).map(|data| {
                    Tensor::new(self.nodes[i].value.shape().to_vec(), data)
                        .expect("gradient matches value shape")
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], var: Var, contribution: impl FnOnce() -> Vec<f64>) {
        if !self.requires(var) {
            return;
        }
        let c = contribution();
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(&c) {
                    *e += v;
                }
            }
            slot @ None => *slot = Some(c),
        }
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().1;
                self.accumulate(grads, *a, || kernels::matmul_nt(g, self.value(*b).data(), m, n, k));
                self.accumulate(grads, *b, || kernels::matmul_tn(self.value(*a).data(), g, k, m, n));
            }
            Op::MatMulNt { a, b } => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).dims2().0;
                self.accumulate(grads, *a, || kernels::matmul(g, self.value(*b).data(), m, n, k));
                self.accumulate(grads, *b, || kernels::matmul_tn(g, self.value(*a).data(), n, m, k));
            }
            Op::Transpose { x } => {
                let (r, c) = self.value(*x).dims2();
                self.accumulate(grads, *x, || kernels::transpose(g, c, r));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, || g.to_vec());
                self.accumulate(grads, *b, || g.to_vec());
            }
            Op::AddRow { x, bias } => {
                self.accumulate(grads, *x, || g.to_vec());
                let d = self.value(*bias).numel();
                self.accumulate(grads, *bias, || {
                    let mut out = vec![0.0; d];
                    for row in g.chunks(d) {
                        for (o, v) in out.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    out
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, || g.iter().zip(bv).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, || g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale { x, factor } => {
                self.accumulate(grads, *x, || g.iter().map(|v| v * factor).collect());
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, || vec![g[0]; n]);
            }
            Op::Columns { x, start } => {
                let (rows, cols) = self.value(*x).dims2();
                let len = node.value.dims2().1;
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; rows * cols];
                    for (dst, src) in out.chunks_mut(cols).zip(g.chunks(len)) {
                        dst[*start..*start + len].copy_from_slice(src);
                    }
                    out
                });
            }
            Op::ConcatColumns { parts } => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    self.accumulate(grads, p, || {
                        let mut out = Vec::with_capacity(rows * w);
                        for row in g.chunks(total) {
                            out.extend_from_slice(&row[offset..offset + w]);
                        }
                        out
                    });
                    offset += w;
                }
            }
            Op::Rows { x, start } => {
                let (rows, cols) = self.value(*x).dims2();
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; rows * cols];
                    out[start * cols..start * cols + g.len()].copy_from_slice(g);
                    out
                });
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    self.accumulate(grads, p, || g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SoftmaxRows { x } => {
                let (_, cols) = node.value.dims2();
                let y = node.value.data();
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; y.len()];
                    for ((o, yr), gr) in out.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let inner = kernels::dot(yr, gr);
                        for ((ov, yv), gv) in o.iter_mut().zip(yr).zip(gr) {
                            *ov = yv * (gv - inner);
                        }
                    }
                    out
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                self.accumulate(grads, *x, || {
                    let mut out = vec![0.0; normalized.len()];
                    for (i, ((o, xh), gr)) in out
                        .chunks_mut(d)
                        .zip(normalized.chunks(d))
                        .zip(g.chunks(d))
                        .enumerate()
                    {
                        let dxh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let sum_dxh: f64 = dxh.iter().sum();
                        let sum_dxh_xh = kernels::dot(&dxh, xh);
                        let scale = inv_std[i] / d as f64;
                        for ((ov, dv), xv) in o.iter_mut().zip(&dxh).zip(xh) {
                            *ov = scale * (d as f64 * dv - sum_dxh - xv * sum_dxh_xh);
                        }
                    }
                    out
                });
                self.accumulate(grads, *gain, || {
                    let mut out = vec![0.0; d];
                    for (xh, gr) in normalized.chunks(d).zip(g.chunks(d)) {
                        for ((o, a), b) in out.iter_mut().zip(xh).zip(gr) {
                            *o += a * b;
                        }
                    }
                    out
                });
                self.accumulate(grads, *bias, || {
                    let mut out = vec![0.0; d];
                    for gr in g.chunks(d) {
                        for (o, v) in out.iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                    out
                });
            }
            Op::Gelu { x } => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, || {
                    g.iter()
                        .zip(xv)
                        .map(|(gv, &v)| gv * (normal_cdf(v) + v * normal_pdf(v)))
                        .collect()
                });
            }
            Op::Attention { qkv, heads, probs } => {
                let (n, three_d) = self.value(*qkv).dims2();
                let d = three_d / 3;
                let dk = d / heads;
                let scale = 1.0 / (dk as f64).sqrt();
                let x = self.value(*qkv).data();
                self.accumulate(grads, *qkv, || {
                    let mut out = vec![0.0; n * three_d];
                    for h in 0..*heads {
                        let q = head_slice(x, n, three_d, h * dk, dk);
                        let k = head_slice(x, n, three_d, d + h * dk, dk);
                        let v = head_slice(x, n, three_d, 2 * d + h * dk, dk);
                        let go = head_slice(g, n, d, h * dk, dk);
                        let a = &probs[h * n * n..(h + 1) * n * n];
                        let dv = kernels::matmul_tn(a, &go, n, n, dk);
                        let mut ds = kernels::matmul_nt(&go, &v, n, dk, n);
                        for (dr, ar) in ds.chunks_mut(n).zip(a.chunks(n)) {
                            let inner = kernels::dot(dr, ar);
                            for (dv, av) in dr.iter_mut().zip(ar) {
                                *dv = av * (*dv - inner) * scale;
                            }
                        }
                        let dq = kernels::matmul(&ds, &k, n, n, dk);
                        let dkk = kernels::matmul_tn(&ds, &q, n, n, dk);
                        for i in 0..n {
                            let row = &mut out[i * three_d..(i + 1) * three_d];
                            row[h * dk..(h + 1) * dk].copy_from_slice(&dq[i * dk..(i + 1) * dk]);
                            row[d + h * dk..d + (h + 1) * dk].copy_from_slice(&dkk[i * dk..(i + 1) * dk]);
                            row[2 * d + h * dk..2 * d + (h + 1) * dk].copy_from_slice(&dv[i * dk..(i + 1) * dk]);
                        }
                    }
                    out
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                row_weights,
                probs,
            } => {
                let (rows, classes) = self.value(*logits).dims2();
                let upstream = g[0] / rows as f64;
                self.accumulate(grads, *logits, || {
                    let mut out = probs.clone();
                    for (i, row) in out.chunks_mut(classes).enumerate() {
                        row[labels[i]] -= 1.0;
                        let w = upstream * row_weights[i];
                        for v in row.iter_mut() {
                            *v *= w;
                        }
                    }
                    out
                });
            }
        }
    }
}
