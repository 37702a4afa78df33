//! Define-by-run reverse-mode differentiation over row-major matrices.
//!
//! Every node holds a 2-D value. A [`Graph`] is built fresh for each forward
//! pass and discarded after [`Graph::backward`].

use std::collections::HashMap;

use super::params::ParamId;
use super::tensor::Tensor;
use crate::error::{bail_input, bail_shape, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Adds a 1×c row to every row of an r×c matrix.
    AddRow(Var, Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    /// out[i, j] = in[i, idx[i * cols + j]]
    GatherInRow(Var, Vec<usize>),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    SumAll(Var),
    SumRows(Var),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
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

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node { rows, cols, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that participates in differentiation.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_raw(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant_raw dimensions");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub(crate) fn bind_param(&mut self, id: ParamId, t: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = if trainable { self.leaf(t) } else { self.constant(t) };
        self.bound.insert(id, v);
        v
    }

    pub(crate) fn bindings(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&id, &v)| (id, v))
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("graph node dims are consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            bail_shape!("matmul {}x{} · {}x{}", m, k, k2, n);
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.node(a).value, (k, 1), &self.node(b).value, (n, 1), &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMul(a, b), rg))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            bail_shape!("matmul_bt {}x{} · ({}x{})ᵀ", m, k, n, k2);
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.node(a).value, (k, 1), &self.node(b).value, (1, k), &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(m, n, out, Op::MatMulBt(a, b), rg))
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let da = self.dims(a);
        let db = self.dims(b);
        if da != db {
            bail_shape!("{what}: {:?} vs {:?}", da, db);
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, "add")?;
        let out = zip_map(&self.node(a).value, &self.node(b).value, |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(r, c, out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, "sub")?;
        let out = zip_map(&self.node(a).value, &self.node(b).value, |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(r, c, out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, "mul")?;
        let out = zip_map(&self.node(a).value, &self.node(b).value, |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(r, c, out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.node(a).value.iter().map(|x| x * s).collect();
        let rg = self.rg(&[a]);
        self.push(r, c, out, Op::Scale(a, s), rg)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.dims(row) != (1, c) {
            bail_shape!("add_row: {}x{} + {:?}", r, c, self.dims(row));
        }
        let bias = &self.node(row).value;
        let out = self
            .node(a)
            .value
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(bias).map(|(x, b)| x + b))
            .collect();
        let rg = self.rg(&[a, row]);
        Ok(self.push(r, c, out, Op::AddRow(a, row), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail_input!("concat_rows of nothing");
        }
        let c = self.dims(parts[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims(p);
            if pc != c {
                bail_shape!("concat_rows column mismatch {} vs {}", pc, c);
            }
            rows += r;
            out.extend_from_slice(&self.node(p).value);
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, c, out, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > r {
            bail_shape!("slice_rows {}..{} of {} rows", start, start + len, r);
        }
        let out = self.node(a).value[start * c..(start + len) * c].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(len, c, out, Op::SliceRows(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail_input!("concat_cols of nothing");
        }
        let r = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                bail_shape!("concat_cols row mismatch {} vs {}", pr, r);
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.node(p).value[i * pc..(i + 1) * pc]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(r, total, out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > c {
            bail_shape!("slice_cols {}..{} of {} cols", start, start + len, c);
        }
        let src = &self.node(a).value;
        let out = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(r, len, out, Op::SliceCols(a, start), rg))
    }

    /// Selects rows by index (embedding lookup, position picking).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if idx.is_empty() {
            bail_input!("gather_rows with no indices");
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            bail_input!("gather_rows index {} out of {} rows", bad, r);
        }
        let src = &self.node(a).value;
        let out = idx.iter().flat_map(|&i| src[i * c..(i + 1) * c].iter().copied()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(idx.len(), c, out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    /// Per-row column gather: `out[i, j] = a[i, idx[i * out_cols + j]]`.
    pub fn gather_in_row(&mut self, a: Var, out_cols: usize, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if out_cols == 0 || idx.len() != r * out_cols {
            bail_shape!("gather_in_row: {} indices for {}x{}", idx.len(), r, out_cols);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            bail_input!("gather_in_row index {} out of {} cols", bad, c);
        }
        let src = &self.node(a).value;
        let out = idx.iter().enumerate().map(|(k, &j)| src[(k / out_cols) * c + j]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(r, out_cols, out, Op::GatherInRow(a, idx.to_vec()), rg))
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries come out as exactly zero. Every row needs one allowed entry.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(a);
        if mask.len() != r * c {
            bail_shape!("mask has {} entries for {}x{}", mask.len(), r, c);
        }
        let src = &self.node(a).value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = &mask[i * c..(i + 1) * c];
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                bail_input!("softmax row {} has no unmasked entry", i);
            }
            let mut denom = 0.0;
            for j in 0..c {
                if m[j] {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    denom += e;
                }
            }
            out[i * c..(i + 1) * c].iter_mut().for_each(|x| *x /= denom);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(r, c, out, Op::MaskedSoftmax(a), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        self.masked_softmax(a, &vec![true; r * c])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            bail_shape!("layer_norm affine params must be 1x{}", c);
        }
        let src = &self.node(x).value;
        let g = &self.node(gamma).value;
        let b = &self.node(beta).value;
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(r, c, out, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Exact GeLU, `x · Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = self.node(a).value.iter().map(|&x| gelu_scalar(x)).collect();
        let rg = self.rg(&[a]);
        self.push(r, c, out, Op::Gelu(a), rg)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            bail_shape!("{} targets for {} rows", targets.len(), r);
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            bail_input!("target class {} outside [0, {})", bad, c);
        }
        let src = &self.node(logits).value;
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|x| (x - max).exp()).sum();
            let lse = max + denom.ln();
            loss += lse - row[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), probs };
        Ok(self.push(1, 1, vec![loss / r as f64], op, rg))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum();
        let rg = self.rg(&[a]);
        self.push(1, 1, vec![s], Op::SumAll(a), rg)
    }

    /// Column sums, giving a 1×c row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (_, c) = self.dims(a);
        let mut out = vec![0.0; c];
        for chunk in self.node(a).value.chunks(c) {
            out.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
        }
        let rg = self.rg(&[a]);
        self.push(1, c, out, Op::SumRows(a), rg)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.dims(loss) != (1, 1) {
            bail_input!("backward needs a scalar, got {:?}", self.dims(loss));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else { continue };
            self.propagate(node, &dout, &mut grads);
            grads[idx] = Some(dout);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node, dout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.requires_grad(*a) {
                    // dA = dC · Bᵀ
                    let g = grad_slot(grads, *a, m * k);
                    gemm(m, n, k, dout, (n, 1), self.value(*b), (1, n), g, 1.0);
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dC
                    let g = grad_slot(grads, *b, k * n);
                    gemm(k, m, n, self.value(*a), (1, k), dout, (n, 1), g, 1.0);
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.requires_grad(*a) {
                    // dA = dC · B
                    let g = grad_slot(grads, *a, m * k);
                    gemm(m, n, k, dout, (n, 1), self.value(*b), (k, 1), g, 1.0);
                }
                if self.requires_grad(*b) {
                    // dB = dCᵀ · A
                    let g = grad_slot(grads, *b, n * k);
                    gemm(n, m, k, dout, (1, n), self.value(*a), (k, 1), g, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |g| add_into(g, dout));
                self.acc(grads, *b, |g| add_into(g, dout));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |g| add_into(g, dout));
                self.acc(grads, *b, |g| g.iter_mut().zip(dout).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dout).zip(vb).for_each(|((x, d), y)| *x += d * y)
                });
                self.acc(grads, *b, |g| {
                    g.iter_mut().zip(dout).zip(va).for_each(|((x, d), y)| *x += d * y)
                });
            }
            Op::Scale(a, s) => {
                self.acc(grads, *a, |g| g.iter_mut().zip(dout).for_each(|(x, d)| *x += d * s));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, *a, |g| add_into(g, dout));
                self.acc(grads, *row, |g| {
                    for chunk in dout.chunks(cols) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.node(p).value.len();
                    self.acc(grads, p, |g| add_into(g, &dout[offset..offset + n]));
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                self.acc(grads, *a, |g| add_into(&mut g[start * cols..(start + rows) * cols], dout));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    self.acc(grads, p, |g| {
                        for i in 0..rows {
                            add_into(&mut g[i * pc..(i + 1) * pc], &dout[i * cols + offset..i * cols + offset + pc]);
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceCols(a, start) => {
                let ac = self.dims(*a).1;
                self.acc(grads, *a, |g| {
                    for i in 0..rows {
                        add_into(&mut g[i * ac + start..i * ac + start + cols], &dout[i * cols..(i + 1) * cols]);
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                self.acc(grads, *a, |g| {
                    for (k, &i) in idx.iter().enumerate() {
                        add_into(&mut g[i * cols..(i + 1) * cols], &dout[k * cols..(k + 1) * cols]);
                    }
                });
            }
            Op::GatherInRow(a, idx) => {
                let ac = self.dims(*a).1;
                self.acc(grads, *a, |g| {
                    for (k, &j) in idx.iter().enumerate() {
                        g[(k / cols) * ac + j] += dout[k];
                    }
                });
            }
            Op::MaskedSoftmax(a) => {
                let y = &node.value;
                self.acc(grads, *a, |g| {
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let dr = &dout[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(dr).map(|(p, d)| p * d).sum();
                        for j in 0..cols {
                            g[i * cols + j] += yr[j] * (dr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = self.value(*gamma);
                self.acc(grads, *x, |g| {
                    let n = cols as f64;
                    for i in 0..rows {
                        let xh = &xhat[i * cols..(i + 1) * cols];
                        let dr = &dout[i * cols..(i + 1) * cols];
                        let dxhat: Vec<f64> = dr.iter().zip(gv).map(|(d, w)| d * w).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat.iter().zip(xh).map(|(d, h)| d * h).sum::<f64>() / n;
                        for j in 0..cols {
                            g[i * cols + j] += rstd[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                });
                self.acc(grads, *gamma, |g| {
                    for (k, d) in dout.iter().enumerate() {
                        g[k % cols] += d * xhat[k];
                    }
                });
                self.acc(grads, *beta, |g| {
                    for chunk in dout.chunks(cols) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Gelu(a) => {
                let xs = self.value(*a);
                self.acc(grads, *a, |g| {
                    g.iter_mut().zip(dout).zip(xs).for_each(|((x, d), &v)| *x += d * gelu_grad(v))
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = self.dims(*logits).1;
                let scale = dout[0] / targets.len() as f64;
                self.acc(grads, *logits, |g| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            g[i * c + j] += scale * (probs[i * c + j] - onehot);
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                self.acc(grads, *a, |g| g.iter_mut().for_each(|x| *x += dout[0]));
            }
            Op::SumRows(a) => {
                self.acc(grads, *a, |g| {
                    for chunk in g.chunks_mut(cols) {
                        add_into(chunk, dout);
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if self.requires_grad(v) {
            let n = self.node(v).value.len();
            f(grad_slot(grads, v, n));
        }
    }
}

fn grad_slot(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `c = a · b + beta · c` with explicit (row, col) strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths cover every index reachable through the given
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}
