//! Closed-form diagnosis-logit gradients and their reverse-mode
//! counterparts.
//!
//! MCB head surface: `∇_{p_c} ℓ_j = W_d[j,:] · J_{z→u} · J_{u→p_c}` with
//! `J_{u→p_c} = diag(g) + diag(p_c) · diag(σ′(h2)) · W2 · diag(1[h1>0]) · W1[:, h..2h]`
//! and `J_{z→u} = (1/s) diag(γ) (I − 11ᵀ/h − ffᵀ/h)`.
//!
//! MCB common surface keeps only the path through the gate input `p_t`.
//! VCBM: `∇_ĉ ℓ_j = W_d[j,:]` and `∇_{p_t} ℓ_j = W_d[j,:] · diag(σ′(a)) · W_c`.
//!
//! Diagonal factors are applied as element-wise products.

use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, ModelOutput};
use crate::numcore::{sigmoid, Array, Tape};

fn need<'a>(v: &'a Option<Array>, what: &str) -> Result<&'a [f64]> {
    v.as_ref()
        .map(Array::data)
        .ok_or_else(|| Error::Input(format!("model output lacks {what}")))
}

fn check_label(model: &Model, j: usize) -> Result<()> {
    if j >= model.labels.len() {
        return Err(Error::Input(format!("label index {j} out of range")));
    }
    Ok(())
}

/// `x · M[:, cols]` for row-major `m` with `m_cols` columns.
fn row_times_block(x: &[f64], m: &Array, col0: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        let row = &m.row_slice(r)[col0..col0 + width];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xr * w;
        }
    }
    out
}

/// `w · J_{z→u}` for the bottleneck LayerNorm at `u`.
fn through_layer_norm(model: &Model, w: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let gamma = model.param("bottleneck.ln.gamma")?.data();
    let h = u.len() as f64;
    let mean = u.iter().sum::<f64>() / h;
    let var = u.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h;
    let s = (var + model.config.ln_eps).sqrt();
    let f: Vec<f64> = u.iter().map(|x| (x - mean) / s).collect();
    let a: Vec<f64> = w.iter().zip(gamma).map(|(w, g)| w * g / s).collect();
    let a_mean = a.iter().sum::<f64>() / h;
    let a_f = a.iter().zip(&f).map(|(a, f)| a * f).sum::<f64>() / h;
    Ok(a.iter().zip(&f).map(|(a, f)| a - a_mean - f * a_f).collect())
}

/// `v · diag(p_c) · diag(σ′(h2)) · W2 · diag(1[h1>0]) · W1[:, col0..col0+h]`.
fn through_gate(model: &Model, out: &ModelOutput, v: &[f64], col0: usize) -> Result<Vec<f64>> {
    let p_c = need(&out.p_c, "p_c")?;
    let h1 = need(&out.h1, "h1")?;
    let g = need(&out.g, "g")?;
    let q: Vec<f64> = v
        .iter()
        .zip(p_c)
        .zip(g)
        .map(|((v, p), g)| v * p * g * (1.0 - g))
        .collect();
    let w2 = model.param("gate.w2")?;
    let mut r = row_times_block(&q, w2, 0, w2.cols());
    for (r, &a) in r.iter_mut().zip(h1) {
        if a <= 0.0 {
            *r = 0.0;
        }
    }
    Ok(row_times_block(&r, model.param("gate.w1")?, col0, model.hidden()))
}

/// Closed-form gradient of logit `j` at the diagnosis-head input surface:
/// `p_c` for MCB, `ĉ` for VCBM.
pub fn head_gradient(model: &Model, out: &ModelOutput, j: usize) -> Result<Vec<f64>> {
    check_label(model, j)?;
    let w_d = model.param("head.w_d")?.row_slice(j).to_vec();
    match model.kind() {
        ModelKind::Vcbm => Ok(w_d),
        ModelKind::Mcb => {
            let v = through_layer_norm(model, &w_d, need(&out.u, "u")?)?;
            let g = need(&out.g, "g")?;
            let via_gate = through_gate(model, out, &v, model.hidden())?;
            Ok(v.iter().zip(g).zip(via_gate).map(|((v, g), r)| v * g + r).collect())
        }
    }
}

/// Closed-form gradient of logit `j` at `p_t`. For MCB only the path
/// through the gate-network input counts.
pub fn common_surface_gradient(model: &Model, out: &ModelOutput, j: usize) -> Result<Vec<f64>> {
    check_label(model, j)?;
    let w_d = model.param("head.w_d")?.row_slice(j).to_vec();
    match model.kind() {
        ModelKind::Vcbm => {
            let w_c = model.param("concept_head.w_c")?;
            let b_c = model.param("concept_head.b_c")?.data();
            let p_t = out.p_t.data();
            let q: Vec<f64> = (0..w_c.rows())
                .map(|c| {
                    let a = w_c.row_slice(c).iter().zip(p_t).map(|(w, x)| w * x).sum::<f64>() + b_c[c];
                    let s = sigmoid(a);
                    w_d[c] * s * (1.0 - s)
                })
                .collect();
            Ok(row_times_block(&q, w_c, 0, w_c.cols()))
        }
        ModelKind::Mcb => {
            let v = through_layer_norm(model, &w_d, need(&out.u, "u")?)?;
            through_gate(model, out, &v, 0)
        }
    }
}

enum Surface {
    Head,
    Common,
}

fn autodiff(model: &Model, out: &ModelOutput, j: usize, surface: Surface) -> Result<Vec<f64>> {
    check_label(model, j)?;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let (wrt, logits) = match (model.kind(), surface) {
        (ModelKind::Vcbm, Surface::Head) => {
            let c = tape.leaf(&out.c_hat);
            (c, model.head_graph(&mut tape, &bound, c)?)
        }
        (ModelKind::Vcbm, Surface::Common) => {
            let p = tape.leaf(&out.p_t);
            let c = model.concept_graph(&mut tape, &bound, p)?;
            (p, model.head_graph(&mut tape, &bound, c)?)
        }
        (ModelKind::Mcb, surface) => {
            let p_c = out
                .p_c
                .as_ref()
                .ok_or_else(|| Error::Input("model output lacks p_c".into()))?;
            let (p_t, p_c) = match surface {
                Surface::Head => (tape.constant(&out.p_t), tape.leaf(p_c)),
                Surface::Common => (tape.leaf(&out.p_t), tape.constant(p_c)),
            };
            let wrt = if matches!(surface, Surface::Head) { p_c } else { p_t };
            let [.., z] = model.gate_graph(&mut tape, &bound, p_t, p_c)?;
            (wrt, model.head_graph(&mut tape, &bound, z)?)
        }
    };
    let lj = tape.slice_cols(logits, j, 1)?;
    let grads = tape.backward(lj)?;
    Ok(grads
        .get(wrt)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; tape.value(wrt).len()]))
}

/// Reverse-mode counterpart of [`head_gradient`].
pub fn head_gradient_autodiff(model: &Model, out: &ModelOutput, j: usize) -> Result<Vec<f64>> {
    autodiff(model, out, j, Surface::Head)
}

/// Reverse-mode counterpart of [`common_surface_gradient`].
pub fn common_surface_gradient_autodiff(model: &Model, out: &ModelOutput, j: usize) -> Result<Vec<f64>> {
    autodiff(model, out, j, Surface::Common)
}
