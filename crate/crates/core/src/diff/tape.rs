//! Reverse-mode differentiation over an append-only operation tape.
//!
//! Every forward operation pushes one node holding its value and the rule
//! needed to push gradients back to its inputs. Node ids only ever refer to
//! earlier nodes, so the push order is a topological order and the backward
//! pass is a single reverse sweep.

use super::tensor::{gemm, Tensor};
use crate::error::{CapsError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Square(Var),
    Relu(Var),
    RowSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    LookupRows {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SumAll(Var),
    MeanAll(Var),
    RowSums(Var),
    ColMeans(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    Minimum(Var, Var),
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Parameters may be borrowed for the tape's lifetime `'p`
/// instead of copied.
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    macs: u64,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` if nothing reached it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by matrix products so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.nodes[v.0].requires_grad)
    }

    /// Leaf holding a copy of `t`.
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.input(t, false)
    }

    /// Trainable leaf borrowed from a parameter store.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(t),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(CapsError::dim("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            0.0,
            &mut out,
        );
        self.macs += (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts_unchecked(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        if k != k2 {
            return Err(CapsError::dim(
                "matmul_nt",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (1, k),
            0.0,
            &mut out,
        );
        self.macs += (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts_unchecked(m, n, out), Op::MatMulNt(a, b), rg))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() || ta.cols() != tb.cols() {
            return Err(CapsError::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts_unchecked(ta.rows(), ta.cols(), data);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        x: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.cols();
        if tr.len() != c {
            return Err(CapsError::dim(name, tx.shape(), tr.shape()));
        }
        let r = tr.data();
        let data = tx
            .data()
            .chunks(c)
            .flat_map(|xs| xs.iter().zip(r).map(|(&a, &b)| f(a, b)))
            .collect();
        let out = Tensor::from_parts_unchecked(tx.rows(), c, data);
        let rg = self.rg(&[x, row]);
        Ok(self.push(out, op, rg))
    }

    /// Adds a length-`n` row to every row of an `m x n` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, |a, b| a + b, Op::AddRow(x, row))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, |a, b| a * b, Op::MulRow(x, row))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::from_parts_unchecked(t.rows(), t.cols(), data);
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v + c, Op::Offset(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, f64::exp, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map(x, |v| v * v, Op::Square(x))
    }

    /// `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Clamps into `[lo, hi]`; gradient passes only where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn row_softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let c = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::from_parts_unchecked(t.rows(), c, data);
        let rg = self.rg(&[x]);
        self.push(out, Op::RowSoftmax(x), rg)
    }

    /// Per-row normalization with population variance, then `* gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if n < 2 {
            return Err(CapsError::contract("layer_norm needs at least 2 columns"));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        if g.len() != n || b.len() != n {
            return Err(CapsError::dim("layer_norm", t.shape(), g.shape()));
        }
        let mut xhat = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m * n);
        for row in t.data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(h * g.data()[j] + b.data()[j]);
            }
        }
        let out = Tensor::from_parts_unchecked(m, n, out);
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn lookup_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(CapsError::Index {
                    what: "lookup table",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        if ids.is_empty() {
            return Err(CapsError::contract("lookup_rows with no ids"));
        }
        let out = Tensor::from_parts_unchecked(ids.len(), d, data);
        let rg = self.rg(&[table]);
        Ok(self.push(
            out,
            Op::LookupRows {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[row][target]`.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (m, v) = (t.rows(), t.cols());
        if targets.len() != m {
            return Err(CapsError::dim("cross_entropy", t.shape(), &[targets.len()]));
        }
        let mut probs = t.data().to_vec();
        let mut loss = 0.0;
        for (r, (row, &target)) in probs.chunks_mut(v).zip(targets).enumerate() {
            if target >= v {
                return Err(CapsError::Index {
                    what: "cross-entropy target",
                    index: target,
                    bound: v,
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - t.data()[r * v + target];
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / m as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        if width == 0 || start + width > n {
            return Err(CapsError::dim("slice_cols", t.shape(), &[start, width]));
        }
        let data = t
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let out = Tensor::from_parts_unchecked(m, width, data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| CapsError::contract("concat_cols of nothing"))?;
        let m = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(CapsError::dim(
                    "concat_cols",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
        }
        let n: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::from_parts_unchecked(m, n, data);
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// `m x n -> m x 1`
    pub fn row_sums(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data: Vec<f64> = t.data().chunks(t.cols()).map(|r| r.iter().sum()).collect();
        let out = Tensor::from_parts_unchecked(t.rows(), 1, data);
        let rg = self.rg(&[x]);
        self.push(out, Op::RowSums(x), rg)
    }

    /// `m x n -> 1 x n`
    pub fn col_means(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (m, n) = (t.rows(), t.cols());
        let mut data = vec![0.0; n];
        for row in t.data().chunks(n) {
            for (acc, v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= m as f64;
        }
        let out = Tensor::from_parts_unchecked(1, n, data);
        let rg = self.rg(&[x]);
        self.push(out, Op::ColMeans(x), rg)
    }

    /// Reverse sweep from a scalar `loss`. The tape itself is not modified,
    /// so calling this twice yields identical gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(CapsError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.get();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = out.cols();
                if rg(*a) {
                    // dA = dC * B^T
                    let bd = self.value(*b).data();
                    let ga = acc(grads, *a, m * k);
                    gemm(m, n, k, g, (n, 1), bd, (1, n), 1.0, ga);
                }
                if rg(*b) {
                    // dB = A^T * dC
                    let ad = self.value(*a).data();
                    let gb = acc(grads, *b, k * n);
                    gemm(k, m, n, ad, (1, k), g, (n, 1), 1.0, gb);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.shape(*a);
                let n = out.cols();
                if rg(*a) {
                    // dA = dC * B
                    let bd = self.value(*b).data();
                    let ga = acc(grads, *a, m * k);
                    gemm(m, n, k, g, (n, 1), bd, (k, 1), 1.0, ga);
                }
                if rg(*b) {
                    // dB = dC^T * A
                    let ad = self.value(*a).data();
                    let gb = acc(grads, *b, n * k);
                    gemm(n, m, k, g, (1, n), ad, (k, 1), 1.0, gb);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if rg(*a) {
                    for (d, s) in acc(grads, *a, g.len()).iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if rg(*b) {
                    for (d, s) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                        *d += sign * s;
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bd = self.value(*b).data();
                    for ((d, s), y) in acc(grads, *a, g.len()).iter_mut().zip(g).zip(bd) {
                        *d += s * y;
                    }
                }
                if rg(*b) {
                    let ad = self.value(*a).data();
                    for ((d, s), x) in acc(grads, *b, g.len()).iter_mut().zip(g).zip(ad) {
                        *d += s * x;
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if rg(*a) {
                    let ga = acc(grads, *a, g.len());
                    for j in 0..g.len() {
                        if ad[j] <= bd[j] {
                            ga[j] += g[j];
                        }
                    }
                }
                if rg(*b) {
                    let gb = acc(grads, *b, g.len());
                    for j in 0..g.len() {
                        if ad[j] > bd[j] {
                            gb[j] += g[j];
                        }
                    }
                }
            }
            Op::AddRow(x, row) => {
                let n = out.cols();
                if rg(*x) {
                    for (d, s) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                        *d += s;
                    }
                }
                if rg(*row) {
                    let gr = acc(grads, *row, n);
                    for chunk in g.chunks(n) {
                        for (d, s) in gr.iter_mut().zip(chunk) {
                            *d += s;
                        }
                    }
                }
            }
            Op::MulRow(x, row) => {
                let n = out.cols();
                let (xd, rd) = (self.value(*x).data(), self.value(*row).data());
                if rg(*x) {
                    let gx = acc(grads, *x, g.len());
                    for (j, (d, s)) in gx.iter_mut().zip(g).enumerate() {
                        *d += s * rd[j % n];
                    }
                }
                if rg(*row) {
                    let gr = acc(grads, *row, n);
                    for (j, s) in g.iter().enumerate() {
                        gr[j % n] += s * xd[j];
                    }
                }
            }
            Op::Scale(x, c) => {
                for (d, s) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                    *d += c * s;
                }
            }
            Op::Offset(x) => {
                for (d, s) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                    *d += s;
                }
            }
            Op::Exp(x) => {
                for ((d, s), y) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(out.data()) {
                    *d += s * y;
                }
            }
            Op::Square(x) => {
                let xd = self.value(*x).data();
                for ((d, s), v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xd) {
                    *d += 2.0 * v * s;
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                for ((d, s), v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xd) {
                    if *v > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xd = self.value(*x).data();
                for ((d, s), v) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(xd) {
                    if *v >= *lo && *v <= *hi {
                        *d += s;
                    }
                }
            }
            Op::RowSoftmax(x) => {
                let n = out.cols();
                let gx = acc(grads, *x, g.len());
                for ((y, dy), dx) in out.data().chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[j] += y[j] * (dy[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = out.cols();
                let gd = self.value(*gain).data();
                if rg(*gain) {
                    let gg = acc(grads, *gain, n);
                    for (h, dy) in xhat.chunks(n).zip(g.chunks(n)) {
                        for j in 0..n {
                            gg[j] += dy[j] * h[j];
                        }
                    }
                }
                if rg(*bias) {
                    let gb = acc(grads, *bias, n);
                    for dy in g.chunks(n) {
                        for j in 0..n {
                            gb[j] += dy[j];
                        }
                    }
                }
                if rg(*x) {
                    let gx = acc(grads, *x, g.len());
                    let nf = n as f64;
                    for (r, ((h, dy), dx)) in xhat.chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)).enumerate() {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..n {
                            let dh = dy[j] * gd[j];
                            sum_dh += dh;
                            sum_dh_h += dh * h[j];
                        }
                        let inv = inv_std[r];
                        for j in 0..n {
                            let dh = dy[j] * gd[j];
                            dx[j] += inv / nf * (nf * dh - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::LookupRows { table, ids } => {
                let d = out.cols();
                let tl = self.value(*table).len();
                let gt = acc(grads, *table, tl);
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[r * d + j];
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let v = self.value(*logits).cols();
                let m = targets.len() as f64;
                let scale = g[0] / m;
                let gl = acc(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..v {
                        let one = if j == t { 1.0 } else { 0.0 };
                        gl[r * v + j] += scale * (probs[r * v + j] - one);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let w = out.cols();
                let n = self.value(*x).cols();
                let tl = self.value(*x).len();
                let gx = acc(grads, *x, tl);
                for (r, chunk) in g.chunks(w).enumerate() {
                    for (j, s) in chunk.iter().enumerate() {
                        gx[r * n + start + j] += s;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if rg(p) {
                        let len = self.value(p).len();
                        let gp = acc(grads, p, len);
                        for (r, row) in g.chunks(n).enumerate() {
                            for j in 0..w {
                                gp[r * w + j] += row[offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SumAll(x) => {
                let len = self.value(*x).len();
                for d in acc(grads, *x, len).iter_mut() {
                    *d += g[0];
                }
            }
            Op::MeanAll(x) => {
                let len = self.value(*x).len();
                let s = g[0] / len as f64;
                for d in acc(grads, *x, len).iter_mut() {
                    *d += s;
                }
            }
            Op::RowSums(x) => {
                let n = self.value(*x).cols();
                let len = self.value(*x).len();
                let gx = acc(grads, *x, len);
                for (r, row) in gx.chunks_mut(n).enumerate() {
                    for d in row {
                        *d += g[r];
                    }
                }
            }
            Op::ColMeans(x) => {
                let t = self.value(*x);
                let (m, n) = (t.rows(), t.cols());
                let gx = acc(grads, *x, m * n);
                for row in gx.chunks_mut(n) {
                    for j in 0..n {
                        row[j] += g[j] / m as f64;
                    }
                }
            }
        }
    }
}

/// Numerically guarded softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut t = Tape::new();
        let i = t.constant(Tensor::identity(2));
        let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let b = t.constant(m(&[&[5.0, 6.0], &[7.0, 8.0]]));
        let ia = t.matmul(i, a).unwrap();
        assert_eq!(t.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
        let ab = t.matmul(a, b).unwrap();
        assert_eq!(t.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
        assert_eq!(t.macs(), 16);

        let x = t.constant(Tensor::zeros(&[2, 3]));
        let y = t.constant(Tensor::zeros(&[4, 2]));
        let err = t.matmul(x, y).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[0.0, 2f64.ln()], &[5.0, 5.0], &[1000.0, 0.0]]));
        let s = t.row_softmax(x);
        let out = t.value(s);
        assert!((out.get(0, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((out.get(0, 1) - 2.0 / 3.0).abs() < 1e-15);
        assert!((out.get(1, 0) - 0.5).abs() < 1e-15);
        assert!(out.is_finite());
        // exp(-1000) underflows to exactly 0 in f64, which is the correctly
        // rounded value of the true ~5e-435.
        assert_eq!(out.get(2, 0), 1.0);
        assert_eq!(out.get(2, 1), 0.0);
    }

    #[test]
    fn softmax_three_equal() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[-2.5, -2.5, -2.5]]));
        let s = t.row_softmax(x);
        for &p in t.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut t = Tape::new();
        let x = t.constant(m(&[&[4.0, 4.0], &[1.0, 3.0]]));
        let g = t.constant(Tensor::vector(vec![1.0, 1.0]));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = t.layer_norm(x, g, b).unwrap();
        let out = t.value(y);
        assert_eq!(&out.data()[..2], &[0.0, 0.0]);
        assert!((out.get(1, 0) + 1.0).abs() < 1e-4);
        assert!((out.get(1, 1) - 1.0).abs() < 1e-4);

        let g0 = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let b7 = t.constant(Tensor::vector(vec![0.7, 0.7]));
        let y = t.layer_norm(x, g0, b7).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn relu_examples() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let rr = t.relu(r);
        assert_eq!(t.value(rr).data(), t.value(r).data());
        let n = t.constant(Tensor::vector(vec![-3.0, -0.1]));
        let rn = t.relu(n);
        assert!(t.value(rn).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lookup_rows_examples() {
        let mut t = Tape::new();
        let table = t.input(m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]), true);
        let r = t.lookup_rows(table, &[0]).unwrap();
        assert_eq!(t.value(r).data(), &[1.0, 2.0]);
        let r = t.lookup_rows(table, &[2, 2]).unwrap();
        assert_eq!(t.value(r).data(), &[5.0, 6.0, 5.0, 6.0]);
        let loss = t.sum(r);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(table).unwrap(), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        match t.lookup_rows(table, &[3]) {
            Err(CapsError::Index { index: 3, .. }) => {}
            other => panic!("expected index error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(&[3, 4]));
        let l = t.cross_entropy_logits(z, &[0, 1, 3]).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);

        let z = t.constant(m(&[&[10.0, -10.0]]));
        let l = t.cross_entropy_logits(z, &[0]).unwrap();
        let v = t.value(l).item();
        assert!((0.0..1e-6).contains(&v), "{v}");
        assert!(t.cross_entropy_logits(z, &[2]).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![1.0, -2.0, 3.0]), true);
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.input(Tensor::scalar(3.0), true);
        let y = t.input(Tensor::scalar(-4.0), true);
        let p = t.mul(x, y).unwrap();
        let g = t.backward(p).unwrap();
        assert_eq!(g.get(x).unwrap(), &[-4.0]);
        assert_eq!(g.get(y).unwrap(), &[3.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![0.3, 0.4]), true);
        let a = t.sum(x);
        let b = t.sum(x);
        let s = t.add(a, b).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.input(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(t.backward(x), Err(CapsError::Contract(_))));
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut t = Tape::new();
        let x = t.input(m(&[&[0.1, -0.7], &[1.3, 0.2]]), true);
        let w = t.input(m(&[&[0.5, 0.25], &[-1.0, 2.0]]), true);
        let y = t.matmul(x, w).unwrap();
        let s = t.row_softmax(y);
        let l = t.cross_entropy_logits(s, &[1, 0]).unwrap();
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        assert_eq!(g1.get(x).unwrap(), g2.get(x).unwrap());
        assert_eq!(g1.get(w).unwrap(), g2.get(w).unwrap());
    }
}
