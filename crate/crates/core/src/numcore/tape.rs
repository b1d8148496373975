//! Tape-based reverse-mode differentiation over [`Array`] values.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated; every call
//! returns a [`Var`] handle. [`Tape::backward`] walks the tape in reverse
//! and returns the gradient of a scalar output with respect to every node
//! that (transitively) depends on a [`Tape::leaf`].
//!
//! Leaves may borrow their values, so binding model parameters onto a tape
//! does not copy them.

use std::borrow::Cow;

use super::array::{gemm, Array, Operand};
use super::loss;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    MeanRows(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Focal {
        logits: Var,
        targets: Vec<f64>,
        gamma: f64,
        alpha: f64,
    },
    Bce {
        act: Var,
        targets: Vec<f64>,
    },
    Cosine(Var, Var),
}

struct Node<'a> {
    value: Cow<'a, Array>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of one scalar with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// `None` when the node does not influence the output or does not
    /// depend on any leaf.
    pub fn get(&self, v: Var) -> Option<&Array> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_dims(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: impl Into<Cow<'a, Array>>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: impl Into<Cow<'a, Array>>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A fixed input; no gradient flows into it.
    pub fn constant(&mut self, value: impl Into<Cow<'a, Array>>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// `a · b` for `a: m x k`, `b: k x n`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims();
        let (k2, n) = bv.dims();
        if k != k2 {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Operand::plain(av.data(), k),
            Operand::plain(bv.data(), n),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::from_vec(&[m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: m x k`, `b: n x k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims();
        let (n, k2) = bv.dims();
        if k != k2 {
            return Err(Error::shape(
                "matmul_bt",
                format!("{:?} x {:?}^T", av.shape(), bv.shape()),
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            Operand::plain(av.data(), k),
            Operand::transposed(bv.data(), k),
            &mut out,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::from_vec(&[m, n], out)?, Op::MatMulBt(a, b), rg))
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_dims(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Array::from_vec(av.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Adds the row vector `b` (length n) to every row of `a: m x n`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (_, n) = av.dims();
        if bv.len() != n {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    /// `x · wᵀ + b`, the usual dense layer with `w: out x in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul_bt(x, w)?;
        self.add_row(xw, b)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// ReLU; the subgradient at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols().max(1);
        let mut out = av.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Row-wise layer normalisation with population variance:
    /// `gamma ⊙ (x - mean) / sqrt(var + eps) + beta`.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (m, n) = xv.dims();
        if gv.len() != n || bv.len() != n || n == 0 {
            return Err(Error::shape(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", xv.shape(), gv.shape(), bv.shape()),
            ));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = gv.data()[c] * h + bv.data()[c];
            }
        }
        let out = Array::from_vec(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            out,
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

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(Error::shape("concat_cols", "no inputs")),
        };
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Array::zeros(&[rows, total]);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let c = pv.cols();
            for r in 0..rows {
                out.row_slice_mut(r)[offset..offset + c].copy_from_slice(pv.row_slice(r));
            }
            offset += c;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims();
        if start + len > n {
            return Err(Error::shape(
                "slice_cols",
                format!("{}..{} of {} columns", start, start + len, n),
            ));
        }
        let mut out = Array::zeros(&[m, len]);
        for r in 0..m {
            out.row_slice_mut(r)
                .copy_from_slice(&xv.row_slice(r)[start..start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims();
        if start + len > m {
            return Err(Error::shape(
                "slice_rows",
                format!("{}..{} of {} rows", start, start + len, m),
            ));
        }
        let out = Array::from_vec(&[len, n], xv.data()[start * n..(start + len) * n].to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    /// Mean over rows, giving a `1 x n` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = xv.dims();
        if m == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, v) in out.iter_mut().zip(xv.row_slice(r)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v /= m as f64);
        let rg = self.rg(x);
        Ok(self.push(Array::row(out), Op::MeanRows(x), rg))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, h) = tv.dims();
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::shape("gather", format!("row {} out of {}", bad, v)));
        }
        let mut out = Array::zeros(&[ids.len(), h]);
        for (r, &i) in ids.iter().enumerate() {
            out.row_slice_mut(r).copy_from_slice(tv.row_slice(i));
        }
        let rg = self.rg(table);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Array::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean focal loss over labels; see [`loss::focal_loss`].
    pub fn focal_loss(&mut self, logits: Var, targets: &[f64], gamma: f64, alpha: f64) -> Result<Var> {
        let value = loss::focal_loss(self.value(logits).data(), targets, gamma, alpha)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Array::scalar(value),
            Op::Focal {
                logits,
                targets: targets.to_vec(),
                gamma,
                alpha,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy; see [`loss::bce_loss`].
    pub fn bce_loss(&mut self, act: Var, targets: &[f64]) -> Result<Var> {
        let value = loss::bce_loss(self.value(act).data(), targets)?;
        let rg = self.rg(act);
        Ok(self.push(
            Array::scalar(value),
            Op::Bce {
                act,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// `1 - cos(a, b)`; see [`loss::cosine_align_loss`].
    pub fn cosine_align_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = loss::cosine_align_loss(self.value(a).data(), self.value(b).data())?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::scalar(value), Op::Cosine(a, b), rg))
    }

    /// Reverse-mode sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        let len = self.value(out).len();
        if len != 1 {
            return Err(Error::NonScalar(len));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array::filled(self.value(out).shape(), 1.0));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, g: Array) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape();
                *slot = Some(if g.shape() == shape {
                    g
                } else {
                    g.reshaped(shape).expect("gradient size matches its node")
                });
            }
        }
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let y = &*node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = av.dims();
                let n = bv.cols();
                if self.rg(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        Operand::plain(g.data(), n),
                        Operand::transposed(bv.data(), n),
                        &mut da,
                        0.0,
                    );
                    self.accumulate(grads, a, Array::from_vec(av.shape(), da).unwrap());
                }
                if self.rg(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(
                        k,
                        m,
                        n,
                        Operand::transposed(av.data(), k),
                        Operand::plain(g.data(), n),
                        &mut db,
                        0.0,
                    );
                    self.accumulate(grads, b, Array::from_vec(bv.shape(), db).unwrap());
                }
            }
            &Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = av.dims();
                let n = bv.rows();
                if self.rg(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(
                        m,
                        n,
                        k,
                        Operand::plain(g.data(), n),
                        Operand::plain(bv.data(), k),
                        &mut da,
                        0.0,
                    );
                    self.accumulate(grads, a, Array::from_vec(av.shape(), da).unwrap());
                }
                if self.rg(b) {
                    let mut db = vec![0.0; n * k];
                    gemm(
                        n,
                        m,
                        k,
                        Operand::transposed(g.data(), n),
                        Operand::plain(av.data(), k),
                        &mut db,
                        0.0,
                    );
                    self.accumulate(grads, b, Array::from_vec(bv.shape(), db).unwrap());
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.rg(a) {
                    let d = g.data().iter().zip(bv.data()).map(|(g, b)| g * b).collect();
                    self.accumulate(grads, a, Array::from_vec(av.shape(), d).unwrap());
                }
                if self.rg(b) {
                    let d = g.data().iter().zip(av.data()).map(|(g, a)| g * a).collect();
                    self.accumulate(grads, b, Array::from_vec(bv.shape(), d).unwrap());
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|v| v * s)),
            &Op::AddRow(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.rg(b) {
                    let bv = self.value(b);
                    let n = bv.len();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, b, Array::from_vec(bv.shape(), db).unwrap());
                }
            }
            &Op::Sigmoid(a) => {
                let d = g.data().iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, a, Array::from_vec(y.shape(), d).unwrap());
            }
            &Op::Relu(a) => {
                let x = self.value(a);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, a, Array::from_vec(y.shape(), d).unwrap());
            }
            &Op::Softmax(a) => {
                let n = y.cols().max(1);
                let mut d = vec![0.0; y.len()];
                for ((dr, gr), yr) in d.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((o, g), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *o = y * (g - dot);
                    }
                }
                self.accumulate(grads, a, Array::from_vec(y.shape(), d).unwrap());
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = y.dims();
                let gv = self.value(*gamma);
                if self.rg(*x) {
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let dxh: Vec<f64> = gr.iter().zip(gv.data()).map(|(g, w)| g * w).collect();
                        let mean_d = dxh.iter().sum::<f64>() / n as f64;
                        let mean_dh = dxh.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                        for c in 0..n {
                            dx[r * n + c] = inv_std[r] * (dxh[c] - mean_d - hr[c] * mean_dh);
                        }
                    }
                    self.accumulate(grads, *x, Array::from_vec(self.value(*x).shape(), dx).unwrap());
                }
                if self.rg(*gamma) {
                    let mut dg = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            dg[c] += g.data()[r * n + c] * xhat[r * n + c];
                        }
                    }
                    self.accumulate(grads, *gamma, Array::from_vec(gv.shape(), dg).unwrap());
                }
                if self.rg(*beta) {
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *beta, Array::from_vec(self.value(*beta).shape(), db).unwrap());
                }
            }
            Op::ConcatCols(parts) => {
                let rows = y.rows();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.rg(p) {
                        let mut d = Array::zeros(pv.shape());
                        for r in 0..rows {
                            d.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            &Op::SliceCols(x, start) => {
                let xv = self.value(x);
                let len = y.cols();
                let mut d = Array::zeros(xv.shape());
                for r in 0..y.rows() {
                    d.row_slice_mut(r)[start..start + len].copy_from_slice(g.row_slice(r));
                }
                self.accumulate(grads, x, d);
            }
            &Op::SliceRows(x, start) => {
                let xv = self.value(x);
                let n = xv.cols();
                let mut d = Array::zeros(xv.shape());
                d.data_mut()[start * n..start * n + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, x, d);
            }
            &Op::MeanRows(x) => {
                let xv = self.value(x);
                let m = xv.rows();
                let mut d = Array::zeros(xv.shape());
                for r in 0..m {
                    for (o, v) in d.row_slice_mut(r).iter_mut().zip(g.data()) {
                        *o = v / m as f64;
                    }
                }
                self.accumulate(grads, x, d);
            }
            Op::Gather(table, ids) => {
                let tv = self.value(*table);
                let mut d = Array::zeros(tv.shape());
                for (r, &i) in ids.iter().enumerate() {
                    for (o, v) in d.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *table, d);
            }
            &Op::Sum(x) => {
                let xv = self.value(x);
                self.accumulate(grads, x, Array::filled(xv.shape(), g.data()[0]));
            }
            Op::Focal {
                logits,
                targets,
                gamma,
                alpha,
            } => {
                let lv = self.value(*logits);
                let d = loss::focal_loss_grad(lv.data(), targets, *gamma, *alpha)
                    .into_iter()
                    .map(|v| v * g.data()[0])
                    .collect();
                self.accumulate(grads, *logits, Array::from_vec(lv.shape(), d).unwrap());
            }
            Op::Bce { act, targets } => {
                let av = self.value(*act);
                let d = loss::bce_loss_grad(av.data(), targets)
                    .into_iter()
                    .map(|v| v * g.data()[0])
                    .collect();
                self.accumulate(grads, *act, Array::from_vec(av.shape(), d).unwrap());
            }
            &Op::Cosine(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (da, db) = loss::cosine_align_loss_grad(av.data(), bv.data());
                let s = g.data()[0];
                if self.rg(a) {
                    let d = da.into_iter().map(|v| v * s).collect();
                    self.accumulate(grads, a, Array::from_vec(av.shape(), d).unwrap());
                }
                if self.rg(b) {
                    let d = db.into_iter().map(|v| v * s).collect();
                    self.accumulate(grads, b, Array::from_vec(bv.shape(), d).unwrap());
                }
            }
        }
    }
}
