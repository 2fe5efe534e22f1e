//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every op in execution order; [`Graph::backward`] walks
//! the tape in reverse. Parameters enter as borrowed leaves so a forward pass
//! never copies the weights.

use std::borrow::Cow;

use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::rng::{check_rate, dropout_mask, MaskRng};
use super::Tensor;
use crate::error::{Error, Result};

/// Value written into masked attention scores. Finite, and far enough below
/// any real score that its softmax weight underflows to exactly zero.
pub const MASKED_SCORE: f64 = -1.0e9;

pub const GELU_COEFF: f64 = 0.044715;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    CausalMask(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Cols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Row {
        x: Var,
        index: usize,
    },
    MeanRows(Var),
    StackRows(Vec<Var>),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a node that requires grad. Leaves off the loss path get an
    /// all-zero tensor; nodes that never required grad give `None`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::invalid(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn as_matrix(t: &Tensor, op: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::invalid(format!(
            "{op}: expected a matrix, got shape {s:?}"
        ))),
    }
}

fn gelu_scalar(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let t = (k * (x + GELU_COEFF * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_COEFF * x * x)
}

fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut total = 0.0;
        for &v in row {
            let e = (v - max).exp();
            total += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= total;
        }
    }
    out
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Owned leaf.
    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    /// Borrowed leaf; the tensor is not copied.
    pub fn leaf_ref(&mut self, t: &'a Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, requires_grad)
    }

    /// `a @ b` for `a: [m, k]`, `b: [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a), "matmul")?;
        let (k2, n) = as_matrix(self.value(b), "matmul")?;
        if k != k2 {
            return Err(shape_err(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = matmul_nn(self.value(a).data(), m, k, self.value(b).data(), n);
        Ok(self.push_owned(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
        ))
    }

    /// `a @ b^T` for `a: [m, k]`, `b: [n, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix(self.value(a), "matmul_t")?;
        let (n, k2) = as_matrix(self.value(b), "matmul_t")?;
        if k != k2 {
            return Err(shape_err(
                "matmul_t",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let out = matmul_nt(self.value(a).data(), m, k, self.value(b).data(), n);
        Ok(self.push_owned(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMulT(a, b),
            &[a, b],
        ))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push_owned(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push_owned(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of `[m, n]` input.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, n) = as_matrix(ta, "add_row")?;
        if tb.shape() != [n] {
            return Err(shape_err("add_row", ta.shape(), tb.shape()));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push_owned(out, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push_owned(out, Op::Scale(a, c), &[a])
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu_scalar);
        self.push_owned(out, Op::Gelu(a), &[a])
    }

    /// Per-row layer normalisation with affine `gain` and `bias` of length
    /// `cols`. `eps` sits inside the square root, so a constant row maps to
    /// `bias` exactly.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let (_, n) = tx.rows_cols();
        for p in [gain, bias] {
            if self.value(p).shape() != [n] {
                return Err(shape_err("layer_norm", tx.shape(), self.value(p).shape()));
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = Vec::with_capacity(tx.numel());
        let mut inv_std = Vec::new();
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks_exact(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push_owned(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (_, n) = t.rows_cols();
        let out = Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), n));
        self.push_owned(out, Op::Softmax(a), &[a])
    }

    /// Replaces entry `(i, j)` with [`MASKED_SCORE`] wherever `j > i`.
    pub fn causal_mask(&mut self, a: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.value(a), "causal_mask")?;
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for v in &mut data[i * n + (i + 1).min(n)..(i + 1) * n] {
                *v = MASKED_SCORE;
            }
        }
        Ok(self.push_owned(
            Tensor::from_parts(vec![m, n], data),
            Op::CausalMask(a),
            &[a],
        ))
    }

    /// Gathers rows of `table: [vocab, d]` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (vocab, d) = as_matrix(t, "embedding")?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding: empty id list"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::invalid(format!(
                    "embedding: id {id} >= vocabulary size {vocab}"
                )));
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        Ok(self.push_owned(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Column block `[start, start + len)` of a matrix.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x), "cols")?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!(
                "cols: block {start}+{len} out of {n} columns"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        Ok(self.push_owned(
            Tensor::from_parts(vec![m, len], data),
            Op::Cols { x, start },
            &[x],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols: no inputs"))?;
        let (m, _) = as_matrix(self.value(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = as_matrix(self.value(p), "concat_cols")?;
            if r != m {
                return Err(shape_err(
                    "concat_cols",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![m, total], data);
        Ok(self.push_owned(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row `index` of a matrix, as `[1, n]`.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x), "row")?;
        if index >= m {
            return Err(Error::invalid(format!(
                "row: index {index} out of {m} rows"
            )));
        }
        let data = self.value(x).row(index).to_vec();
        Ok(self.push_owned(
            Tensor::from_parts(vec![1, n], data),
            Op::Row { x, index },
            &[x],
        ))
    }

    /// Column means, as `[1, n]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = as_matrix(self.value(x), "mean_rows")?;
        let mut data = vec![0.0; n];
        for row in self.value(x).data().chunks_exact(n) {
            for (acc, v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        Ok(self.push_owned(Tensor::from_parts(vec![1, n], data), Op::MeanRows(x), &[x]))
    }

    /// Stacks `[1, n]` rows (or matrices with equal width) vertically.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("stack_rows: no inputs"))?;
        let (_, n) = as_matrix(self.value(first), "stack_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = as_matrix(self.value(p), "stack_rows")?;
            if c != n {
                return Err(shape_err(
                    "stack_rows",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::from_parts(vec![rows, n], data);
        Ok(self.push_owned(out, Op::StackRows(parts.to_vec()), parts))
    }

    /// Inverted dropout as a graph op. Returns `x` itself, recording nothing
    /// and drawing no randomness, when inactive or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut MaskRng, active: bool) -> Result<Var> {
        check_rate(rate)?;
        if !active || rate == 0.0 {
            return Ok(x);
        }
        let t = self.value(x);
        let mask = dropout_mask(t.numel(), rate, rng);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        Ok(self.push_owned(out, Op::Dropout { x, mask }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_owned(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean cross-entropy of `logits: [batch, classes]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = as_matrix(self.value(logits), "cross_entropy")?;
        if labels.len() != b {
            return Err(Error::invalid(format!(
                "cross_entropy: {} labels for {b} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(format!(
                "cross_entropy: label {bad} >= {c} classes"
            )));
        }
        let probs = softmax_rows(self.value(logits).data(), c);
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = self.value(logits).row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= b as f64;
        Ok(self.push_owned(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                node.requires_grad.then(|| match g {
                    Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape()),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).rows_cols();
                let (_, n) = self.value(*b).rows_cols();
                if wants(*a) {
                    acc(*a, matmul_nt(g, m, n, self.value(*b).data(), k));
                }
                if wants(*b) {
                    acc(*b, matmul_tn(self.value(*a).data(), m, k, g, n));
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = self.value(*a).rows_cols();
                let (n, _) = self.value(*b).rows_cols();
                if wants(*a) {
                    acc(*a, matmul_nn(g, m, n, self.value(*b).data(), k));
                }
                if wants(*b) {
                    acc(*b, matmul_tn(g, m, n, self.value(*a).data(), k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.to_vec());
                if wants(*bias) {
                    let n = self.value(*bias).numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        for (s, v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    acc(*bias, gb);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|v| v * c).collect()),
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(
                    *a,
                    g.iter().zip(x).map(|(g, &x)| g * gelu_grad(x)).collect(),
                );
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.value(*gain).numel();
                let gv = self.value(*gain).data();
                if wants(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((gr, hr), is) in g.chunks_exact(n).zip(xhat.chunks_exact(n)).zip(inv_std) {
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dh_h =
                            dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        dx.extend(
                            dh.iter()
                                .zip(hr)
                                .map(|(d, h)| is * (d - mean_dh - h * mean_dh_h)),
                        );
                    }
                    acc(*x, dx);
                }
                if wants(*gain) {
                    let mut dg = vec![0.0; n];
                    for (gr, hr) in g.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                    acc(*gain, dg);
                }
                if wants(*bias) {
                    let mut db = vec![0.0; n];
                    for gr in g.chunks_exact(n) {
                        for j in 0..n {
                            db[j] += gr[j];
                        }
                    }
                    acc(*bias, db);
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let (_, n) = node.value.rows_cols();
                let mut dx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks_exact(n).zip(y.chunks_exact(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    dx.extend(gr.iter().zip(yr).map(|(g, y)| y * (g - dot)));
                }
                acc(*a, dx);
            }
            Op::CausalMask(a) => {
                let (m, n) = node.value.rows_cols();
                let mut dx = g.to_vec();
                for i in 0..m {
                    for v in &mut dx[i * n + (i + 1).min(n)..(i + 1) * n] {
                        *v = 0.0;
                    }
                }
                acc(*a, dx);
            }
            Op::Embedding { table, ids } => {
                let t = self.value(*table);
                let (_, d) = t.rows_cols();
                let mut dt = vec![0.0; t.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
                acc(*table, dt);
            }
            Op::Cols { x, start } => {
                let (m, n) = self.value(*x).rows_cols();
                let len = node.value.rows_cols().1;
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len]
                        .copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.rows_cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).rows_cols().1;
                    if wants(p) {
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(p, dp);
                    }
                    offset += w;
                }
            }
            Op::Row { x, index } => {
                let (m, n) = self.value(*x).rows_cols();
                let mut dx = vec![0.0; m * n];
                dx[index * n..(index + 1) * n].copy_from_slice(g);
                acc(*x, dx);
            }
            Op::MeanRows(x) => {
                let (m, n) = self.value(*x).rows_cols();
                let mut dx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    dx.extend(g.iter().map(|v| v / m as f64));
                }
                acc(*x, dx);
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    acc(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Dropout { x, mask } => acc(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Sum(x) => acc(*x, vec![g[0]; self.value(*x).numel()]),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.value(*logits).rows_cols().1;
                let b = labels.len() as f64;
                let mut dl = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    dl[r * c + l] -= 1.0;
                }
                for v in &mut dl {
                    *v *= g[0] / b;
                }
                acc(*logits, dl);
            }
        }
    }
}
