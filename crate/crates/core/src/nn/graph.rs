//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters live
//! in a [`ParamStore`] outside the graph; [`Graph::backward`] accumulates
//! their gradients into the store, so two backward passes without
//! [`ParamStore::zero_grad`] add up.

use std::collections::HashMap;

use super::tensor::{gemm, Tensor, View};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name: name.into(), value, grad, decay });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Overwrites every value with the matching parameter of `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        assert_eq!(self.params.len(), other.params.len(), "parameter layouts differ");
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value.data.copy_from_slice(&src.value.data);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, rstd: Vec<f64> },
    GatherRows { x: NodeId, idx: Vec<usize> },
    GatherCols { x: NodeId, idx: Vec<usize> },
    LogSumExpRows { x: NodeId, probs: Vec<f64> },
    Attention { qkv: NodeId, batch: usize, seq: usize, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64>, norm: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass with respect to every graph node.
pub struct Grads(Vec<Option<Vec<f64>>>);

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.0[id.0].as_deref()
    }
}

pub const LN_EPS: f64 = 1e-10;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn check(op: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::shape(op, detail()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    /// Graph node holding the current value of a parameter. Repeated calls
    /// for the same parameter return the same node.
    pub fn param(&mut self, ps: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(ps.get(id).value.clone(), Op::Param(id));
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        check("matmul", k == k2, || format!("{m}x{k} · {k2}x{n}"))?;
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, 1.0, &self.value(a).data, View::row_major(k), &self.value(b).data, View::row_major(n), 0.0, &mut out.data, View::row_major(n));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip(&mut self, op: &'static str, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        check(op, self.shape(a) == self.shape(b), || format!("{:?} vs {:?}", self.shape(a), self.shape(b)))?;
        let (va, vb) = (self.value(a), self.value(b));
        Ok(Tensor::new(va.rows, va.cols, va.data.iter().zip(&vb.data).map(|(x, y)| f(*x, *y)).collect()))
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        Tensor::new(v.rows, v.cols, v.data.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let ([_, n], [r, n2]) = (self.shape(a), self.shape(row));
        check("add_row", r == 1 && n == n2, || format!("{:?} + {:?}", self.shape(a), self.shape(row)))?;
        let bias = &self.value(row).data;
        let va = self.value(a);
        let data = va.data.chunks(n).flat_map(|r| r.iter().zip(bias).map(|(x, b)| x + b)).collect();
        let t = Tensor::new(va.rows, n, data);
        Ok(self.push(t, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = self.map(a, |x| x * c);
        self.push(t, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = self.map(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let t = self.map(a, |x| 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()));
        self.push(t, Op::Gelu(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let t = self.map(a, |x| x * x);
        self.push(t, Op::Square(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        let s = v.data.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row-wise normalisation followed by a per-column affine map.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let [rows, n] = self.shape(x);
        check("layer_norm", self.shape(gamma) == [1, n] && self.shape(beta) == [1, n], || {
            format!("x {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta))
        })?;
        let (vx, g, b) = (&self.value(x).data, &self.value(gamma).data, &self.value(beta).data);
        let mut xhat = vec![0.0; rows * n];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &vx[r * n..(r + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mu) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = g[c] * h + b[c];
            }
        }
        Ok(self.push(Tensor::new(rows, n, out), Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    /// Row `i` of the output is row `idx[i]` of `x`; used for embedding lookups.
    pub fn gather_rows(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let [rows, n] = self.shape(x);
        check("gather_rows", idx.iter().all(|&i| i < rows), || format!("index out of {rows} rows"))?;
        let v = &self.value(x).data;
        let data = idx.iter().flat_map(|&i| v[i * n..(i + 1) * n].iter().copied()).collect();
        let t = Tensor::new(idx.len(), n, data);
        Ok(self.push(t, Op::GatherRows { x, idx }))
    }

    /// Picks `x[r][idx[r]]` into an `m × 1` column.
    pub fn gather_cols(&mut self, x: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        let [rows, n] = self.shape(x);
        check("gather_cols", idx.len() == rows && idx.iter().all(|&i| i < n), || {
            format!("{} indices for {rows}x{n}", idx.len())
        })?;
        let v = self.value(x);
        let data = idx.iter().enumerate().map(|(r, &c)| v.get(r, c)).collect();
        let t = Tensor::new(rows, 1, data);
        Ok(self.push(t, Op::GatherCols { x, idx }))
    }

    pub fn logsumexp_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let (rows, n) = (v.rows, v.cols);
        let mut probs = vec![0.0; rows * n];
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let row = v.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            out[r] = m + z.ln();
            for c in 0..n {
                probs[r * n + c] = (row[c] - m).exp() / z;
            }
        }
        self.push(Tensor::new(rows, 1, out), Op::LogSumExpRows { x, probs })
    }

    /// Multi-head scaled dot-product attention over `batch` sequences of
    /// `seq` tokens.
    ///
    /// `qkv` is `(batch·seq) × 3d` with query, key and value blocks side by
    /// side. `mask[(b·seq + q)·seq + k]` allows query `q` to read key `k` of
    /// sequence `b`. Disallowed keys get exactly zero weight; a query with no
    /// allowed key outputs zeros.
    pub fn attention(&mut self, qkv: NodeId, mask: &[bool], batch: usize, seq: usize, heads: usize) -> Result<NodeId> {
        let [rows, cols] = self.shape(qkv);
        check("attention", rows == batch * seq && cols % 3 == 0, || format!("qkv {rows}x{cols} for {batch}x{seq}"))?;
        let d = cols / 3;
        check("attention", heads > 0 && d % heads == 0, || format!("d_model {d} not divisible by {heads} heads"))?;
        check("attention", mask.len() == batch * seq * seq, || format!("mask has {} entries", mask.len()))?;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let src = &self.nodes[qkv.0].value.data;
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        let mut scores = vec![0.0; seq * seq];
        for b in 0..batch {
            let base = b * seq * cols;
            let m = &mask[b * seq * seq..(b + 1) * seq * seq];
            for h in 0..heads {
                let q = View { offset: base + h * dh, rs: cols, cs: 1 };
                let kt = View { offset: base + d + h * dh, rs: 1, cs: cols };
                let v = View { offset: base + 2 * d + h * dh, rs: cols, cs: 1 };
                gemm(seq, dh, seq, scale, src, q, src, kt, 0.0, &mut scores, View::row_major(seq));
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                masked_softmax(&scores, m, seq, p);
                let o = View { offset: b * seq * d + h * dh, rs: d, cs: 1 };
                gemm(seq, seq, dh, 1.0, p, View::row_major(seq), src, v, 0.0, &mut out, o);
            }
        }
        Ok(self.push(Tensor::new(rows, d, out), Op::Attention { qkv, batch, seq, heads, probs }))
    }

    /// Every attention node, in creation order.
    pub fn attention_nodes(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).map(NodeId).filter(|&id| self.attention_probs(id).is_some()).collect()
    }

    /// Softmax weights of an attention node, laid out `[batch][head][query][key]`.
    pub fn attention_probs(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Weighted mean of per-row softmax cross-entropy. Rows with zero weight
    /// do not contribute; if every weight is zero the loss is zero.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>, weights: Vec<f64>) -> Result<NodeId> {
        let [rows, n] = self.shape(logits);
        check("cross_entropy", targets.len() == rows && weights.len() == rows && targets.iter().all(|&t| t < n), || {
            format!("{} targets, {} weights for {rows}x{n} logits", targets.len(), weights.len())
        })?;
        let v = self.value(logits);
        let norm: f64 = weights.iter().sum();
        let mut probs = vec![0.0; rows * n];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = v.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for c in 0..n {
                probs[r * n + c] = (row[c] - m).exp() / z;
            }
            if weights[r] != 0.0 {
                loss += weights[r] * (m + z.ln() - row[targets[r]]);
            }
        }
        let loss = if norm > 0.0 { loss / norm } else { 0.0 };
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, weights, probs, norm }))
    }

    /// Backpropagates from the scalar `loss`, accumulating parameter
    /// gradients into `ps`.
    pub fn backward(&self, loss: NodeId, ps: &mut ParamStore) -> Result<Grads> {
        check("backward", self.shape(loss) == [1, 1], || format!("loss has shape {:?}", self.shape(loss)))?;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, ps);
            grads[i] = Some(g);
        }
        Ok(Grads(grads))
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut Vec<f64> {
        let len = self.nodes[id.0].value.len();
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>], ps: &mut ParamStore) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Param(pid) => {
                for (dst, src) in ps.get_mut(*pid).grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
            Op::MatMul(a, b) => {
                let ([m, k], [_, n]) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (&self.value(*a).data, &self.value(*b).data);
                gemm(m, n, k, 1.0, g, View::row_major(n), vb, View::transposed(n), 1.0, self.slot(grads, *a), View::row_major(k));
                gemm(k, m, n, 1.0, va, View::transposed(k), g, View::row_major(n), 1.0, self.slot(grads, *b), View::row_major(n));
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), g, 1.0);
                add_into(self.slot(grads, *b), g, 1.0);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(grads, *a), g, 1.0);
                add_into(self.slot(grads, *b), g, -1.0);
            }
            Op::AddRow(a, row) => {
                add_into(self.slot(grads, *a), g, 1.0);
                let n = self.shape(*row)[1];
                let dr = self.slot(grads, *row);
                for chunk in g.chunks(n) {
                    add_into(dr, chunk, 1.0);
                }
            }
            Op::Scale(a, c) => add_into(self.slot(grads, *a), g, *c),
            Op::Relu(a) => {
                let x = &self.value(*a).data;
                for ((d, gi), xi) in self.slot(grads, *a).iter_mut().zip(g).zip(x) {
                    if *xi > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Gelu(a) => {
                let x = &self.value(*a).data;
                for ((d, gi), &xi) in self.slot(grads, *a).iter_mut().zip(g).zip(x) {
                    let th = (GELU_C * (xi + 0.044715 * xi * xi * xi)).tanh();
                    let dudx = GELU_C * (1.0 + 3.0 * 0.044715 * xi * xi);
                    *d += gi * (0.5 * (1.0 + th) + 0.5 * xi * (1.0 - th * th) * dudx);
                }
            }
            Op::Square(a) => {
                let x = &self.value(*a).data;
                for ((d, gi), xi) in self.slot(grads, *a).iter_mut().zip(g).zip(x) {
                    *d += 2.0 * xi * gi;
                }
            }
            Op::Sum(a) => self.slot(grads, *a).iter_mut().for_each(|d| *d += g[0]),
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                self.slot(grads, *a).iter_mut().for_each(|d| *d += g[0] / n);
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let [rows, n] = self.shape(*x);
                let gv = self.value(*gamma).data.clone();
                {
                    let dg = self.slot(grads, *gamma);
                    for r in 0..rows {
                        for c in 0..n {
                            dg[c] += g[r * n + c] * xhat[r * n + c];
                        }
                    }
                }
                {
                    let db = self.slot(grads, *beta);
                    for chunk in g.chunks(n) {
                        add_into(db, chunk, 1.0);
                    }
                }
                let dx = self.slot(grads, *x);
                let mut dxhat = vec![0.0; n];
                for r in 0..rows {
                    let xh = &xhat[r * n..(r + 1) * n];
                    for c in 0..n {
                        dxhat[c] = g[r * n + c] * gv[c];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        dx[r * n + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                    }
                }
            }
            Op::GatherRows { x, idx } => {
                let n = self.shape(*x)[1];
                let dx = self.slot(grads, *x);
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut dx[src * n..(src + 1) * n], &g[r * n..(r + 1) * n], 1.0);
                }
            }
            Op::GatherCols { x, idx } => {
                let n = self.shape(*x)[1];
                let dx = self.slot(grads, *x);
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * n + c] += g[r];
                }
            }
            Op::LogSumExpRows { x, probs } => {
                let n = self.shape(*x)[1];
                let dx = self.slot(grads, *x);
                for (r, gr) in g.iter().enumerate() {
                    for c in 0..n {
                        dx[r * n + c] += gr * probs[r * n + c];
                    }
                }
            }
            Op::Attention { qkv, batch, seq, heads, probs } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let cols = self.shape(*qkv)[1];
                let d = cols / 3;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let src = &self.value(*qkv).data;
                let dqkv = self.slot(grads, *qkv);
                let mut dp = vec![0.0; seq * seq];
                for b in 0..batch {
                    let base = b * seq * cols;
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                        let q = View { offset: base + h * dh, rs: cols, cs: 1 };
                        let k = View { offset: base + d + h * dh, rs: cols, cs: 1 };
                        let vt = View { offset: base + 2 * d + h * dh, rs: 1, cs: cols };
                        let v = View { offset: base + 2 * d + h * dh, rs: cols, cs: 1 };
                        let go = View { offset: b * seq * d + h * dh, rs: d, cs: 1 };
                        // dP = dO · Vᵀ ; dV += Pᵀ · dO
                        gemm(seq, dh, seq, 1.0, g, go, src, vt, 0.0, &mut dp, View::row_major(seq));
                        gemm(seq, seq, dh, 1.0, p, View::transposed(seq), g, go, 1.0, dqkv, v);
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P))
                        for r in 0..seq {
                            let row = r * seq..(r + 1) * seq;
                            let dot: f64 = dp[row.clone()].iter().zip(&p[row.clone()]).map(|(a, b)| a * b).sum();
                            for c in row {
                                dp[c] = p[c] * (dp[c] - dot);
                            }
                        }
                        gemm(seq, seq, dh, scale, &dp, View::row_major(seq), src, k, 1.0, dqkv, q);
                        gemm(seq, seq, dh, scale, &dp, View::transposed(seq), src, q, 1.0, dqkv, k);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs, norm } => {
                if *norm <= 0.0 {
                    return;
                }
                let n = self.shape(*logits)[1];
                let dx = self.slot(grads, *logits);
                for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let s = g[0] * w / norm;
                    for c in 0..n {
                        dx[r * n + c] += s * probs[r * n + c];
                    }
                    dx[r * n + t] -= s;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Softmax over the allowed entries of each row; other entries are exactly 0.
fn masked_softmax(scores: &[f64], mask: &[bool], n: usize, out: &mut [f64]) {
    for r in 0..n {
        let row = r * n..(r + 1) * n;
        let m = row.clone().filter(|&i| mask[i]).map(|i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            out[row].iter_mut().for_each(|p| *p = 0.0);
            continue;
        }
        let mut z = 0.0;
        for i in row.clone() {
            out[i] = if mask[i] { (scores[i] - m).exp() } else { 0.0 };
            z += out[i];
        }
        for i in row {
            out[i] /= z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient() {
        let mut ps = ParamStore::new();
        let w = ps.add("w", Tensor::new(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]), true);
        let mut g = Graph::new();
        let x = g.input(Tensor::new(1, 2, vec![1.5, -2.0]));
        let wn = g.param(&ps, w);
        let y = g.matmul(x, wn).unwrap();
        let loss = g.sum(y);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad, vec![1.5, 1.5, 1.5, -2.0, -2.0, -2.0]);
        // accumulation without zeroing
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.get(w).grad, vec![3.0, 3.0, 3.0, -4.0, -4.0, -4.0]);
        ps.zero_grad();
        assert!(ps.get(w).grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(2, 3));
        match g.matmul(a, b) {
            Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
            _ => panic!("expected shape error"),
        }
        assert!(g.add_row(a, b).is_err());
        assert!(g.attention(a, &[true; 3], 1, 2, 1).is_err());
        assert!(g.attention(a, &[true; 4], 1, 2, 2).is_err());
        assert!(g.backward(a, &mut ParamStore::new()).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let scores: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let mask: Vec<bool> = (0..16).map(|i| i % 4 <= i / 4).collect();
        let mut p = vec![0.0; 16];
        masked_softmax(&scores, &mask, 4, &mut p);
        for r in 0..4 {
            let s: f64 = p[r * 4..r * 4 + 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            for c in r + 1..4 {
                assert_eq!(p[r * 4 + c], 0.0);
            }
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let mut ps = ParamStore::new();
        let gamma = ps.add("g", Tensor::from_fn(1, 6, |_, _| 1.0), false);
        let beta = ps.add("b", Tensor::zeros(1, 6), false);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_fn(3, 6, |r, c| (r as f64 + 1.0) * (c as f64).powi(2) - 3.0));
        let (gn, bn) = (g.param(&ps, gamma), g.param(&ps, beta));
        let y = g.layer_norm(x, gn, bn).unwrap();
        for r in 0..3 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 6.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_identity_mask_returns_values() {
        let mut g = Graph::new();
        let qkv = g.input(Tensor::from_fn(3, 6, |r, c| (r * 6 + c) as f64 * 0.1));
        let mask: Vec<bool> = (0..9).map(|i| i / 3 == i % 3).collect();
        let out = g.attention(qkv, &mask, 1, 3, 1).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(g.value(out).get(r, c), g.value(qkv).get(r, 4 + c));
            }
        }
    }

    #[test]
    fn attention_single_token_full_weight() {
        let mut g = Graph::new();
        let qkv = g.input(Tensor::new(1, 6, vec![0.3, -0.1, 2.0, 1.0, 0.7, -0.2]));
        let out = g.attention(qkv, &[true], 1, 1, 2).unwrap();
        assert_eq!(g.value(out).data, vec![0.7, -0.2]);
    }

    #[test]
    fn fully_masked_query_outputs_zero() {
        let mut g = Graph::new();
        let qkv = g.input(Tensor::from_fn(2, 6, |r, c| (r + c) as f64));
        let out = g.attention(qkv, &[false, false, true, true], 1, 2, 1).unwrap();
        assert_eq!(g.value(out).row(0), &[0.0, 0.0]);
    }
}
