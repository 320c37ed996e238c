//! Dense rank-2 tensors with a tape-based reverse-mode autodiff and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major matrix of `f64`. Vectors are `1×n` or `n×1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match {rows}x{cols}");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn row(data: Vec<f64>) -> Self {
        Tensor::new(1, data.len(), data)
    }

    pub fn col(data: Vec<f64>) -> Self {
        Tensor::new(data.len(), 1, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Uniform Glorot initialisation for a `fan_in × fan_out` weight.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect())
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a {}x{} tensor", self.rows, self.cols);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` where `op` optionally transposes.
#[allow(clippy::too_many_arguments)]
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool, c: &mut [f64], m: usize, k: usize, n: usize, beta: f64) {
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the strides describe `a` (m×k), `b` (k×n) and `c` (m×n)
    // within their backing slices, which the debug assertions and the
    // callers' shape checks guarantee.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul {}x{} by {}x{}", a.rows, a.cols, b.rows, b.cols);
    let mut out = Tensor::zeros(a.rows, b.cols);
    gemm(a, false, b, false, &mut out.data, a.rows, a.cols, b.cols, 0.0);
    out
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Neighbour lists for masked attention: target row `i` attends to the
/// source rows `sources[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub sources: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var, f64),
    LogSoftmax(Var, f64),
    Log(Var),
    Square(Var),
    Entropy(Var),
    Concat(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    RowSum(Var),
    RowMean(Var),
    Mean(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, tau: f64, mask: std::sync::Arc<AttentionMask>, alpha: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass and differentiates them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(self.value(a), self.value(b));
        let ng = self.ng(&[a, b]);
        self.push(out, Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise op on {:?} and {:?}", x.shape(), y.shape());
        let data = x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect();
        let out = Tensor::new(x.rows, x.cols, data);
        let ng = self.ng(&[a, b]);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a `1×cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert!(b.rows == 1 && b.cols == x.cols, "bias {:?} for {:?}", b.shape(), x.shape());
        let mut out = x.clone();
        for r in out.data.chunks_mut(x.cols) {
            for (v, bb) in r.iter_mut().zip(&b.data) {
                *v += bb;
            }
        }
        let ng = self.ng(&[a, bias]);
        self.push(out, Op::AddRow(a, bias), ng)
    }

    /// Adds a `rows×1` column to every column of `a`.
    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        let (x, c) = (self.value(a), self.value(col));
        assert!(c.cols == 1 && c.rows == x.rows, "column {:?} for {:?}", c.shape(), x.shape());
        let mut out = x.clone();
        for (r, cv) in out.data.chunks_mut(x.cols).zip(&c.data) {
            for v in r.iter_mut() {
                *v += cv;
            }
        }
        let ng = self.ng(&[a, col]);
        self.push(out, Op::AddCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v * s);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let ng = self.ng(&[a]);
        self.push(out, Op::Relu(a), ng)
    }

    /// Row-wise `exp(τ·x_i) / Σ_j exp(τ·x_j)`.
    pub fn softmax(&mut self, a: Var, tau: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in out.data.chunks_mut(x.cols) {
            softmax_in_place(r, tau);
        }
        let ng = self.ng(&[a]);
        self.push(out, Op::Softmax(a, tau), ng)
    }

    /// Row-wise log of [`Tape::softmax`], computed stably.
    pub fn log_softmax(&mut self, a: Var, tau: f64) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in out.data.chunks_mut(x.cols) {
            let max = r.iter().fold(f64::NEG_INFINITY, |m, v| m.max(tau * v));
            let lse = max + r.iter().map(|v| (tau * v - max).exp()).sum::<f64>().ln();
            for v in r.iter_mut() {
                *v = tau * *v - lse;
            }
        }
        let ng = self.ng(&[a]);
        self.push(out, Op::LogSoftmax(a, tau), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let x = self.value(a);
        debug_assert!(x.data.iter().all(|v| *v > 0.0), "log of a non-positive value");
        let out = x.map(f64::ln);
        let ng = self.ng(&[a]);
        self.push(out, Op::Log(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        let ng = self.ng(&[a]);
        self.push(out, Op::Square(a), ng)
    }

    /// Row entropy `-Σ p ln p` of a matrix of probability rows (`rows×1`).
    pub fn entropy(&mut self, p: Var) -> Var {
        let x = self.value(p);
        let data = x.data.chunks(x.cols).map(|r| -r.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum::<f64>()).collect();
        let out = Tensor::col(data);
        let ng = self.ng(&[p]);
        self.push(out, Op::Entropy(p), ng)
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        assert!(parts.iter().all(|p| self.value(*p).rows == rows), "concat of mismatched row counts");
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let ng = self.ng(parts);
        self.push(Tensor::new(rows, cols, data), Op::Concat(parts.to_vec()), ng)
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * x.cols);
        for &i in idx {
            data.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::new(idx.len(), x.cols, data);
        let ng = self.ng(&[a]);
        self.push(out, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Element `idx[r]` of every row `r`, as a column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        assert_eq!(idx.len(), x.rows, "pick needs one index per row");
        let out = Tensor::col(idx.iter().enumerate().map(|(r, &c)| x.at(r, c)).collect());
        let ng = self.ng(&[a]);
        self.push(out, Op::Pick(a, idx.to_vec()), ng)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::col(x.data.chunks(x.cols).map(|r| r.iter().sum()).collect());
        let ng = self.ng(&[a]);
        self.push(out, Op::RowSum(a), ng)
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.cols as f64;
        let out = Tensor::col(x.data.chunks(x.cols).map(|r| r.iter().sum::<f64>() / n).collect());
        let ng = self.ng(&[a]);
        self.push(out, Op::RowMean(a), ng)
    }

    /// Mean of all entries, as a `1×1` tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::scalar(x.data.iter().sum::<f64>() / x.len() as f64);
        let ng = self.ng(&[a]);
        self.push(out, Op::Mean(a), ng)
    }

    /// Multi-head masked dot-product attention. `q` holds one row per
    /// target, `k` and `v` one row per source; each is split into `heads`
    /// equal column blocks. For target `i` and head `h` the weights are
    /// `softmax_j(τ·q_ih·k_jh)` over `j ∈ mask.sources[i]`, and the output
    /// block is `Σ_j α_ijh·v_jh`.
    pub fn masked_attention(&mut self, q: Var, k: Var, v: Var, heads: usize, tau: f64, mask: std::sync::Arc<AttentionMask>) -> Var {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qt.rows, mask.sources.len(), "one mask row per query row");
        assert_eq!(kt.rows, vt.rows, "keys and values need the same rows");
        assert_eq!(qt.cols, kt.cols, "queries and keys need the same width");
        assert!(heads > 0 && qt.cols % heads == 0 && vt.cols % heads == 0, "width not divisible by heads");
        let dk = qt.cols / heads;
        let dv = vt.cols / heads;
        let mut out = Tensor::zeros(qt.rows, vt.cols);
        let mut alpha = Vec::new();
        let mut scores = Vec::new();
        for (i, src) in mask.sources.iter().enumerate() {
            assert!(!src.is_empty(), "attention row {i} has no sources");
            for h in 0..heads {
                let qi = &qt.row_slice(i)[h * dk..(h + 1) * dk];
                scores.clear();
                scores.extend(src.iter().map(|&j| qi.iter().zip(&kt.row_slice(j)[h * dk..(h + 1) * dk]).map(|(a, b)| a * b).sum::<f64>()));
                softmax_in_place(&mut scores, tau);
                let o = &mut out.data[i * vt.cols + h * dv..i * vt.cols + (h + 1) * dv];
                for (&j, &a) in src.iter().zip(&scores) {
                    for (ov, vv) in o.iter_mut().zip(&vt.row_slice(j)[h * dv..(h + 1) * dv]) {
                        *ov += a * vv;
                    }
                }
                alpha.extend_from_slice(&scores);
            }
        }
        let ng = self.ng(&[q, k, v]);
        self.push(out, Op::Attention { q, k, v, heads, tau, mask, alpha }, ng)
    }

    /// Attention weights stored by [`Tape::masked_attention`], laid out per
    /// target row, then per head, then per source in mask order.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    fn accumulate(&mut self, v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass from a `1×1` loss. Gradients of earlier passes are
    /// discarded.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            self.backprop(idx, &op, &g);
            self.grads[idx] = Some(g);
        }
    }

    fn backprop(&mut self, idx: usize, op: &Op, g: &Tensor) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k, n) = (x.rows, x.cols, y.cols);
                let mut da = Tensor::zeros(m, k);
                gemm(g, false, y, true, &mut da.data, m, n, k, 0.0);
                let mut db = Tensor::zeros(k, n);
                gemm(x, true, g, false, &mut db.data, k, m, n, 0.0);
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let da = Tensor::new(g.rows, g.cols, g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
                let db = Tensor::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect());
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::AddRow(a, bias) => {
                let mut db = Tensor::zeros(1, g.cols);
                for r in g.data.chunks(g.cols) {
                    for (d, v) in db.data.iter_mut().zip(r) {
                        *d += v;
                    }
                }
                self.accumulate(*a, g.clone());
                self.accumulate(*bias, db);
            }
            Op::AddCol(a, col) => {
                let dc = Tensor::col(g.data.chunks(g.cols).map(|r| r.iter().sum()).collect());
                self.accumulate(*a, g.clone());
                self.accumulate(*col, dc);
            }
            Op::Scale(a, s) => self.accumulate(*a, g.map(|v| v * s)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let d = Tensor::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect());
                self.accumulate(*a, d);
            }
            Op::Softmax(a, tau) => {
                let y = &self.nodes[idx].value;
                let mut d = Tensor::zeros(g.rows, g.cols);
                for ((dr, gr), yr) in d.data.chunks_mut(g.cols).zip(g.data.chunks(g.cols)).zip(y.data.chunks(g.cols)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = tau * yv * (gv - dot);
                    }
                }
                self.accumulate(*a, d);
            }
            Op::LogSoftmax(a, tau) => {
                let y = &self.nodes[idx].value;
                let mut d = Tensor::zeros(g.rows, g.cols);
                for ((dr, gr), yr) in d.data.chunks_mut(g.cols).zip(g.data.chunks(g.cols)).zip(y.data.chunks(g.cols)) {
                    let gsum: f64 = gr.iter().sum();
                    for ((dv, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *dv = tau * (gv - yv.exp() * gsum);
                    }
                }
                self.accumulate(*a, d);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let d = Tensor::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(gv, xv)| gv / xv).collect());
                self.accumulate(*a, d);
            }
            Op::Square(a) => {
                let x = self.value(*a);
                let d = Tensor::new(g.rows, g.cols, g.data.iter().zip(&x.data).map(|(gv, xv)| 2.0 * gv * xv).collect());
                self.accumulate(*a, d);
            }
            Op::Entropy(p) => {
                let x = self.value(*p);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for ((dr, xr), gv) in d.data.chunks_mut(x.cols).zip(x.data.chunks(x.cols)).zip(&g.data) {
                    for (dv, xv) in dr.iter_mut().zip(xr) {
                        *dv = -gv * (xv.max(f64::MIN_POSITIVE).ln() + 1.0);
                    }
                }
                self.accumulate(*p, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols;
                    let mut d = Tensor::zeros(g.rows, w);
                    for (dr, gr) in d.data.chunks_mut(w).zip(g.data.chunks(g.cols)) {
                        dr.copy_from_slice(&gr[offset..offset + w]);
                    }
                    offset += w;
                    self.accumulate(*p, d);
                }
            }
            Op::GatherRows(a, rows) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for (gr, &r) in g.data.chunks(g.cols).zip(rows) {
                    for (dv, gv) in d.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(gr) {
                        *dv += gv;
                    }
                }
                self.accumulate(*a, d);
            }
            Op::Pick(a, cols) => {
                let x = self.value(*a);
                let mut d = Tensor::zeros(x.rows, x.cols);
                for (r, (&c, gv)) in cols.iter().zip(&g.data).enumerate() {
                    d.data[r * x.cols + c] += gv;
                }
                self.accumulate(*a, d);
            }
            Op::RowSum(a) | Op::RowMean(a) => {
                let x = self.value(*a);
                let s = if matches!(op, Op::RowMean(_)) { 1.0 / x.cols as f64 } else { 1.0 };
                let mut d = Tensor::zeros(x.rows, x.cols);
                for (dr, gv) in d.data.chunks_mut(x.cols).zip(&g.data) {
                    dr.fill(gv * s);
                }
                self.accumulate(*a, d);
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let d = Tensor::filled(x.rows, x.cols, g.item() / x.len() as f64);
                self.accumulate(*a, d);
            }
            Op::Attention { q, k, v, heads, tau, mask, alpha } => {
                let (qt, kt, vt) = (self.value(*q), self.value(*k), self.value(*v));
                let dk = qt.cols / heads;
                let dv = vt.cols / heads;
                let mut dq = Tensor::zeros(qt.rows, qt.cols);
                let mut dkt = Tensor::zeros(kt.rows, kt.cols);
                let mut dvt = Tensor::zeros(vt.rows, vt.cols);
                let mut da = Vec::new();
                let mut pos = 0;
                for (i, src) in mask.sources.iter().enumerate() {
                    for h in 0..*heads {
                        let a = &alpha[pos..pos + src.len()];
                        pos += src.len();
                        let gi = &g.row_slice(i)[h * dv..(h + 1) * dv];
                        da.clear();
                        for (&j, &aj) in src.iter().zip(a) {
                            let vj = &vt.row_slice(j)[h * dv..(h + 1) * dv];
                            da.push(gi.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>());
                            for (d, gv) in dvt.data[j * vt.cols + h * dv..j * vt.cols + (h + 1) * dv].iter_mut().zip(gi) {
                                *d += aj * gv;
                            }
                        }
                        let centre: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                        let qi = &qt.row_slice(i)[h * dk..(h + 1) * dk];
                        for ((&j, &aj), &daj) in src.iter().zip(a).zip(&da) {
                            let de = tau * aj * (daj - centre);
                            if de == 0.0 {
                                continue;
                            }
                            let kj = &kt.row_slice(j)[h * dk..(h + 1) * dk];
                            for (d, kv) in dq.data[i * qt.cols + h * dk..i * qt.cols + (h + 1) * dk].iter_mut().zip(kj) {
                                *d += de * kv;
                            }
                            for (d, qv) in dkt.data[j * kt.cols + h * dk..j * kt.cols + (h + 1) * dk].iter_mut().zip(qi) {
                                *d += de * qv;
                            }
                        }
                    }
                }
                self.accumulate(*q, dq);
                self.accumulate(*k, dkt);
                self.accumulate(*v, dvt);
            }
        }
    }

    /// Gradient of the last backward pass with respect to `v`; zeros when
    /// `v` did not influence the loss.
    pub fn grad(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => {
                let x = self.value(v);
                Tensor::zeros(x.rows, x.cols)
            }
        }
    }
}

/// Stable in-place `softmax(τ·x)`.
pub fn softmax_in_place(x: &mut [f64], tau: f64) {
    let max = x.iter().fold(f64::NEG_INFINITY, |m, v| m.max(tau * v));
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (tau * *v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// Adam with a learning rate per parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lrs: Vec<f64>,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], lrs: Vec<f64>) -> Self {
        assert_eq!(params.len(), lrs.len(), "one learning rate per parameter");
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lrs,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let lr = self.lrs[i];
            for (((w, gv), m), v) in p.data.iter_mut().zip(&g.data).zip(self.m[i].data.iter_mut()).zip(self.v[i].data.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                let mh = *m / b1t;
                let vh = *v / b2t;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// Bias-corrected first and second moments of parameter `i`.
    pub fn corrected_moments(&self, i: usize) -> (Tensor, Tensor) {
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        (self.m[i].map(|x| x / b1t), self.v[i].map(|x| x / b2t))
    }
}

/// Finite-difference gradient checking for code built on [`Tape`].
pub mod gradcheck {
    use super::*;

    /// Largest elementwise relative error between tape gradients and
    /// central differences (step `h`) of the scalar `f` over all `inputs`.
    /// The relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub fn max_rel_error(inputs: &[Tensor], h: f64, floor: f64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.backward(loss);
        let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v)).collect();
        let eval = |xs: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
            let l = f(&mut t, &vs);
            t.value(l).item()
        };
        let mut worst: f64 = 0.0;
        let mut xs = inputs.to_vec();
        for i in 0..xs.len() {
            for e in 0..xs[i].len() {
                let orig = xs[i].data[e];
                xs[i].data[e] = orig + h;
                let up = eval(&xs);
                xs[i].data[e] = orig - h;
                let down = eval(&xs);
                xs[i].data[e] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[i].data[e];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(err);
            }
        }
        worst
    }
}
