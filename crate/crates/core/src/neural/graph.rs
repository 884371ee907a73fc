//! Tape-based reverse-mode differentiation over [`NdArray`] values.
//!
//! Every operation appends a node holding its forward value. Node inputs
//! always precede the node, so [`Graph::backward`] is a single reverse sweep.
//! Parameters enter through [`Graph::param`], which binds a named entry of a
//! [`ParameterStore`] once per graph; the resulting [`Gradients`] are keyed by
//! the same names.

use std::collections::BTreeMap;

use rand::Rng;

use super::params::{Gradients, ParameterStore};
use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, NdArray};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Gather { table: Var, ids: Vec<usize> },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Dropout { input: Var, mask: Vec<f64> },
    Gelu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LayerNorm { input: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows { input: Var, rows: Vec<usize> },
    SumAll(Var),
    DistillXent { logits: Var, coeff: Vec<f64>, probs: Vec<f64>, count: usize },
    BceLogits { logits: Var, targets: Vec<f64>, scale: f64 },
}

#[derive(Debug)]
struct Node {
    value: NdArray,
    op: Op,
    requires_grad: bool,
}

/// Per-row targets for [`Graph::distill_xent`].
///
/// Row `r` contributes `a_r * CE(gold_r, S_r) + (1 - a_r) * KL(T_r || S_r)`
/// where `S_r` is the softmax of the logits. When `teacher` is absent every
/// weight must be 1.
#[derive(Debug, Clone)]
pub struct XentTargets<'a> {
    pub gold: &'a [usize],
    pub teacher: Option<&'a [Vec<f64>]>,
    pub weights: Option<&'a [f64]>,
}

impl<'a> XentTargets<'a> {
    pub fn hard(gold: &'a [usize]) -> Self {
        Self {
            gold,
            teacher: None,
            weights: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: NdArray, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn shape2(&self, v: Var) -> (usize, usize) {
        let a = &self.nodes[v.0].value;
        (a.rows(), a.cols())
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a named parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Rows of `table` selected by `ids`, shape `[ids.len(), cols]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.shape2(table);
        let t = &self.nodes[table.0].value;
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::TokenOutOfRange { id, vocab: rows });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = NdArray::matrix(ids.len(), cols, data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (k2, n) = self.shape2(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(NdArray::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape2(a);
        let (n, k2) = self.shape2(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul_t [{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(&mut out, self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(NdArray::matrix(m, n, out)?, Op::MatMulT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add {:?} + {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if self.value(bias).len() != n {
            return Err(Error::Shape(format!("add_row [{m},{n}] + [{}]", self.value(bias).len())));
        }
        let b = self.value(bias).data();
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + b[i % n])
            .collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape("mul operands differ in shape".into()));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales the
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Dropout { input: a, mask }, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let value = NdArray::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape2(a);
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_into(&x[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
        }
        let value = NdArray::new(self.value(a).shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Shape("layer_norm gain/bias width".into()));
        }
        let x = self.value(a).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let value = NdArray::new(self.value(a).shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: a,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.shape2(a);
        if start >= end || end > n {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of width {n}")));
        }
        let w = end - start;
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&x[r * n + start..r * n + end]);
        }
        let rg = self.rg(a);
        Ok(self.push(NdArray::matrix(m, w, out)?, Op::SliceCols { input: a, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.shape2(parts[0]).0;
        if parts.iter().any(|p| self.shape2(*p).0 != m) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let total: usize = parts.iter().map(|p| self.shape2(*p).1).sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(r));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(NdArray::matrix(m, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.shape2(parts[0]).1;
        if parts.iter().any(|p| self.shape2(*p).1 != n) {
            return Err(Error::Shape("concat_rows column mismatch".into()));
        }
        let mut out = Vec::new();
        let mut m = 0;
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
            m += self.shape2(*p).0;
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(NdArray::matrix(m, n, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.shape2(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::Shape(format!("row {r} of {m}")));
            }
            out.extend_from_slice(self.value(a).row(r));
        }
        let rg = self.rg(a);
        Ok(self.push(
            NdArray::matrix(rows.len(), n, out)?,
            Op::SelectRows {
                input: a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(NdArray::scalar(s), Op::SumAll(a), rg)
    }

    /// Mean over rows of the per-row blend of gold cross-entropy and
    /// teacher KL divergence; see [`XentTargets`]. Computed from logits with
    /// log-sum-exp, so it is finite for any finite input.
    pub fn distill_xent(&mut self, logits: Var, targets: &XentTargets<'_>) -> Result<Var> {
        let (m, n) = self.shape2(logits);
        if targets.gold.len() != m {
            return Err(Error::Shape(format!("{} gold labels for {m} rows", targets.gold.len())));
        }
        if let Some(t) = targets.teacher {
            if t.len() != m || t.iter().any(|row| row.len() != n) {
                return Err(Error::Shape("teacher distribution shape".into()));
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; m * n];
        let mut coeff = vec![0.0; m * n];
        let mut loss = 0.0;
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let lse = log_sum_exp(row);
            let g = targets.gold[r];
            if g >= n {
                return Err(Error::Invalid(format!("gold class {g} out of range {n}")));
            }
            let a = targets.weights.map_or(1.0, |w| w[r]);
            let mut row_loss = a * (lse - row[g]);
            coeff[r * n + g] += a;
            if a < 1.0 {
                let t = targets
                    .teacher
                    .ok_or_else(|| Error::Invalid("weight below 1 without teacher".into()))?;
                for c in 0..n {
                    let tc = t[r][c];
                    if tc > 0.0 {
                        row_loss += (1.0 - a) * tc * (tc.ln() - (row[c] - lse));
                    }
                    coeff[r * n + c] += (1.0 - a) * tc;
                }
            }
            loss += row_loss;
            for c in 0..n {
                probs[r * n + c] = (row[c] - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            NdArray::scalar(loss / m as f64),
            Op::DistillXent {
                logits,
                coeff,
                probs,
                count: m,
            },
            rg,
        ))
    }

    /// `scale * sum_j BCE(sigmoid(z_j), t_j)` in the stable logit form.
    pub fn bce_logits(&mut self, logits: Var, targets: &[f64], scale: f64) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(Error::Shape(format!("{} logits for {} targets", z.len(), targets.len())));
        }
        let total: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            NdArray::scalar(scale * total),
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
                scale,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Only parameters bound through
    /// [`Graph::param`] are reported. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        self.consumed = true;
        if self.value(loss).len() != 1 {
            return Err(Error::Shape("backward() needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(dy);
                continue;
            }
            self.propagate(i, &dy, &mut grads);
        }

        let mut out = Gradients::default();
        for (name, v) in &self.params {
            let shape = self.nodes[v.0].value.shape().to_vec();
            let data = grads[v.0].take().unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.len()]);
            out.insert(name.clone(), NdArray::new(shape, data)?);
        }
        Ok(out)
    }

    fn propagate(&self, i: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let y = &nodes[i].value;
        let needs = |v: &Var| nodes[v.0].requires_grad;
        let len = |v: &Var| nodes[v.0].value.len();
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                grads[v.0].get_or_insert_with(|| vec![0.0; len(&v)])
            }};
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Gather { table, ids } => {
                let cols = nodes[table.0].value.cols();
                let g = acc!(*table);
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        g[id * cols + c] += dy[r * cols + c];
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let n = nodes[b.0].value.cols();
                if needs(a) {
                    let bv = nodes[b.0].value.data();
                    matmul_bt_acc(acc!(*a), dy, bv, m, n, k);
                }
                if needs(b) {
                    let av = nodes[a.0].value.data();
                    matmul_at_acc(acc!(*b), av, dy, m, k, n);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let n = nodes[b.0].value.rows();
                if needs(a) {
                    let bv = nodes[b.0].value.data();
                    matmul_acc(acc!(*a), dy, bv, m, n, k);
                }
                if needs(b) {
                    let av = nodes[a.0].value.data();
                    matmul_at_acc(acc!(*b), dy, av, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if needs(v) {
                        for (g, d) in acc!(*v).iter_mut().zip(dy) {
                            *g += d;
                        }
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if needs(a) {
                    for (g, d) in acc!(*a).iter_mut().zip(dy) {
                        *g += d;
                    }
                }
                if needs(bias) {
                    let n = nodes[bias.0].value.len();
                    let g = acc!(*bias);
                    for (j, d) in dy.iter().enumerate() {
                        g[j % n] += d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let bv = nodes[b.0].value.data();
                    for ((g, d), x) in acc!(*a).iter_mut().zip(dy).zip(bv) {
                        *g += d * x;
                    }
                }
                if needs(b) {
                    let av = nodes[a.0].value.data();
                    for ((g, d), x) in acc!(*b).iter_mut().zip(dy).zip(av) {
                        *g += d * x;
                    }
                }
            }
            Op::Scale(a, s) => {
                for (g, d) in acc!(*a).iter_mut().zip(dy) {
                    *g += d * s;
                }
            }
            Op::Dropout { input, mask } => {
                for ((g, d), m) in acc!(*input).iter_mut().zip(dy).zip(mask) {
                    *g += d * m;
                }
            }
            Op::Gelu(a) => {
                let x = nodes[a.0].value.data();
                for ((g, d), &x) in acc!(*a).iter_mut().zip(dy).zip(x) {
                    *g += d * gelu_grad(x);
                }
            }
            Op::Sigmoid(a) => {
                for ((g, d), s) in acc!(*a).iter_mut().zip(dy).zip(y.data()) {
                    *g += d * s * (1.0 - s);
                }
            }
            Op::Softmax(a) => {
                let (m, n) = (y.rows(), y.cols());
                let yv = y.data();
                let g = acc!(*a);
                for r in 0..m {
                    let s = r * n;
                    let dot: f64 = (0..n).map(|c| dy[s + c] * yv[s + c]).sum();
                    for c in 0..n {
                        g[s + c] += yv[s + c] * (dy[s + c] - dot);
                    }
                }
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (m, n) = (y.rows(), y.cols());
                let gv = nodes[gain.0].value.data().to_vec();
                if needs(gain) {
                    let g = acc!(*gain);
                    for (j, (d, h)) in dy.iter().zip(xhat).enumerate() {
                        g[j % n] += d * h;
                    }
                }
                if needs(bias) {
                    let g = acc!(*bias);
                    for (j, d) in dy.iter().enumerate() {
                        g[j % n] += d;
                    }
                }
                if needs(input) {
                    let g = acc!(*input);
                    for r in 0..m {
                        let s = r * n;
                        let dxhat: Vec<f64> = (0..n).map(|c| dy[s + c] * gv[c]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh = (0..n).map(|c| dxhat[c] * xhat[s + c]).sum::<f64>() / n as f64;
                        for c in 0..n {
                            g[s + c] += rstd[r] * (dxhat[c] - mean_d - xhat[s + c] * mean_dh);
                        }
                    }
                }
            }
            Op::SliceCols { input, start } => {
                let n = nodes[input.0].value.cols();
                let (m, w) = (y.rows(), y.cols());
                let g = acc!(*input);
                for r in 0..m {
                    for c in 0..w {
                        g[r * n + start + c] += dy[r * w + c];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (y.rows(), y.cols());
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    if needs(p) {
                        let g = acc!(*p);
                        for r in 0..m {
                            for c in 0..w {
                                g[r * w + c] += dy[r * total + off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let l = len(p);
                    if needs(p) {
                        for (g, d) in acc!(*p).iter_mut().zip(&dy[off..off + l]) {
                            *g += d;
                        }
                    }
                    off += l;
                }
            }
            Op::SelectRows { input, rows } => {
                let n = y.cols();
                let g = acc!(*input);
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..n {
                        g[r * n + c] += dy[k * n + c];
                    }
                }
            }
            Op::SumAll(a) => {
                for g in acc!(*a).iter_mut() {
                    *g += dy[0];
                }
            }
            Op::DistillXent {
                logits,
                coeff,
                probs,
                count,
            } => {
                // d/dz of a*CE + (1-a)*KL is S - (a*onehot + (1-a)*T)
                let n = nodes[logits.0].value.cols();
                let g = acc!(*logits);
                for r in 0..*count {
                    let w: f64 = coeff[r * n..(r + 1) * n].iter().sum();
                    for c in 0..n {
                        let k = r * n + c;
                        g[k] += dy[0] * (w * probs[k] - coeff[k]) / *count as f64;
                    }
                }
            }
            Op::BceLogits { logits, targets, scale } => {
                let z = nodes[logits.0].value.data();
                for ((g, &z), t) in acc!(*logits).iter_mut().zip(z).zip(targets) {
                    *g += dy[0] * scale * (sigmoid(z) - t);
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, shape: &[usize], data: Vec<f64>) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert(name, NdArray::new(shape.to_vec(), data).unwrap()).unwrap();
        s
    }

    #[test]
    fn backward_twice_is_an_error() {
        let store = store_with("w", &[1], vec![2.0]);
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum_all(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[4.0]);
        assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut store = store_with("used", &[2], vec![1.0, 2.0]);
        store.insert("unused", NdArray::zeros(&[3])).unwrap();
        let mut g = Graph::new();
        let u = g.param(&store, "used").unwrap();
        let _ = g.param(&store, "unused").unwrap();
        let loss = g.sum_all(u);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0; 3]);
        assert_eq!(grads.get("used").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn xent_of_uniform_logits_is_log_classes() {
        let mut g = Graph::new();
        let z = g.constant(NdArray::matrix(1, 4, vec![0.3; 4]).unwrap());
        let loss = g.distill_xent(z, &XentTargets::hard(&[2])).unwrap();
        assert!((g.value(loss).item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut g = Graph::new();
        let z = g.constant(NdArray::new(vec![3], vec![0.0; 3]).unwrap());
        let loss = g.bce_logits(z, &[0.5, 0.5, 0.5], 1.0).unwrap();
        assert!((g.value(loss).item() - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut g = Graph::new();
        let z = g.constant(NdArray::matrix(2, 3, vec![1.0, -50.0, 700.0, 0.0, 0.0, 0.0]).unwrap());
        let s = g.softmax(z);
        for r in 0..2 {
            let row = g.value(s).row(r);
            assert!(row.iter().all(|p| *p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
