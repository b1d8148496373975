//! Layer building blocks composed from tape operators.

use super::array::Array;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Tape handles for the projections of one multi-head attention block.
/// Weights are `out x in`; biases are length `out`.
#[derive(Debug, Clone, Copy)]
pub struct MhaVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
}

/// Scaled dot-product multi-head attention.
///
/// `q: m x h`, `k, v: n x h`; returns `m x h`. Each head attends over the
/// `n` key rows with weights that sum to one, and the concatenated head
/// outputs pass through the output projection.
pub fn mha(tape: &mut Tape<'_>, q: Var, k: Var, v: Var, heads: usize, p: &MhaVars) -> Result<Var> {
    let h = tape.value(q).cols();
    if heads == 0 || !h.is_multiple_of(heads) {
        return Err(Error::shape("mha", format!("width {h} not divisible by {heads} heads")));
    }
    if tape.value(k).rows() == 0 || tape.value(k).rows() != tape.value(v).rows() {
        return Err(Error::shape("mha", "keys and values need the same non-zero row count"));
    }
    if tape.value(k).cols() != h || tape.value(v).cols() != h {
        return Err(Error::shape("mha", "query, key and value widths differ"));
    }
    let qp = tape.linear(q, p.w_q, p.b_q)?;
    let kp = tape.linear(k, p.w_k, p.b_k)?;
    let vp = tape.linear(v, p.w_v, p.b_v)?;
    let d = h / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = tape.slice_cols(qp, head * d, d)?;
        let kh = tape.slice_cols(kp, head * d, d)?;
        let vh = tape.slice_cols(vp, head * d, d)?;
        let scores = tape.matmul_bt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        outs.push(tape.matmul(weights, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    tape.linear(cat, p.w_o, p.b_o)
}

/// Owned attention weights for evaluating [`mha`] outside a training graph.
#[derive(Debug, Clone)]
pub struct MhaWeights {
    pub w_q: Array,
    pub b_q: Array,
    pub w_k: Array,
    pub b_k: Array,
    pub w_v: Array,
    pub b_v: Array,
    pub w_o: Array,
    pub b_o: Array,
}

impl MhaWeights {
    pub fn identity(h: usize) -> Self {
        MhaWeights {
            w_q: Array::identity(h),
            b_q: Array::zeros(&[h]),
            w_k: Array::identity(h),
            b_k: Array::zeros(&[h]),
            w_v: Array::identity(h),
            b_v: Array::zeros(&[h]),
            w_o: Array::identity(h),
            b_o: Array::zeros(&[h]),
        }
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> MhaVars {
        MhaVars {
            w_q: tape.leaf(&self.w_q),
            b_q: tape.leaf(&self.b_q),
            w_k: tape.leaf(&self.w_k),
            b_k: tape.leaf(&self.b_k),
            w_v: tape.leaf(&self.w_v),
            b_v: tape.leaf(&self.b_v),
            w_o: tape.leaf(&self.w_o),
            b_o: tape.leaf(&self.b_o),
        }
    }
}

/// Multi-head attention on plain arrays.
pub fn mha_forward(q: &Array, k: &Array, v: &Array, heads: usize, w: &MhaWeights) -> Result<Array> {
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape);
    let (q, k, v) = (tape.constant(q), tape.constant(k), tape.constant(v));
    let out = mha(&mut tape, q, k, v, heads, &vars)?;
    Ok(tape.value(out).clone())
}

/// Per-head attention weights (`heads` matrices of `m x n`), exposed for
/// inspection.
pub fn attention_weights(q: &Array, k: &Array, heads: usize, w: &MhaWeights) -> Result<Vec<Array>> {
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape);
    let (q, k) = (tape.constant(q), tape.constant(k));
    let h = tape.value(q).cols();
    if heads == 0 || !h.is_multiple_of(heads) {
        return Err(Error::shape("attention_weights", "width not divisible by heads"));
    }
    let qp = tape.linear(q, vars.w_q, vars.b_q)?;
    let kp = tape.linear(k, vars.w_k, vars.b_k)?;
    let d = h / heads;
    let mut out = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = tape.slice_cols(qp, head * d, d)?;
        let kh = tape.slice_cols(kp, head * d, d)?;
        let s = tape.matmul_bt(qh, kh)?;
        let s = tape.scale(s, 1.0 / (d as f64).sqrt());
        let a = tape.softmax_rows(s);
        out.push(tape.value(a).clone());
    }
    Ok(out)
}

/// Layer normalisation of a single vector with population variance.
pub fn layer_norm(u: &Array, gamma: &Array, beta: &Array, eps: f64) -> Result<Array> {
    if u.len() < 2 {
        return Err(Error::shape("layer_norm", "needs at least two features"));
    }
    let mut tape = Tape::new();
    let (u, g, b) = (tape.constant(u), tape.constant(gamma), tape.constant(beta));
    let z = tape.layer_norm_rows(u, g, b, eps)?;
    Ok(tape.value(z).clone())
}
