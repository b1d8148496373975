use serde::{Deserialize, Serialize};

use super::config::{Ablation, LossWeights, ModelKind};
use super::{Graph, ModelOutput};
use crate::error::{Error, Result};
use crate::numcore::{bce_loss, cosine_align_loss, focal_loss, Tape, Var};

/// Unweighted loss terms of one note or batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub diag: f64,
    pub align: f64,
    pub concept: f64,
}

/// Effective align weight: zero for VCBM and for the `no_align` ablation.
pub(crate) fn align_weight(w: &LossWeights, kind: ModelKind, ablation: Ablation) -> f64 {
    if kind == ModelKind::Vcbm || ablation == Ablation::NoAlign {
        0.0
    } else {
        w.align
    }
}

fn as_f64(v: &[u8]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// `λ_diag·focal(ℓ, y) + λ_align·(1 − cos(p_t, p_c)) + λ_concept·BCE(ĉ, c̃)`.
pub fn joint_loss(
    output: &ModelOutput,
    y: &[u8],
    c_tilde: &[u8],
    weights: &LossWeights,
    ablation: Ablation,
) -> Result<(f64, LossComponents)> {
    weights.validate()?;
    let diag = focal_loss(
        output.logits.data(),
        &as_f64(y),
        weights.focal_gamma,
        weights.focal_alpha,
    )?;
    let concept = bce_loss(output.c_hat.data(), &as_f64(c_tilde))?;
    let wa = align_weight(weights, output.kind, ablation);
    let align = match (&output.p_c, wa > 0.0) {
        (Some(p_c), true) => cosine_align_loss(output.p_t.data(), p_c.data())?,
        _ => 0.0,
    };
    let total = weights.diag * diag + wa * align + weights.concept * concept;
    Ok((total, LossComponents { diag, align, concept }))
}

/// Tape version of [`joint_loss`]; returns the total and its components.
pub(crate) fn joint_loss_graph(
    tape: &mut Tape<'_>,
    graph: &Graph,
    kind: ModelKind,
    y: &[u8],
    c_tilde: &[u8],
    weights: &LossWeights,
    ablation: Ablation,
) -> Result<(Var, LossComponents)> {
    let diag = tape.focal_loss(graph.logits, &as_f64(y), weights.focal_gamma, weights.focal_alpha)?;
    let concept = tape.bce_loss(graph.c_hat, &as_f64(c_tilde))?;
    let mut parts = vec![tape.scale(diag, weights.diag), tape.scale(concept, weights.concept)];
    let mut comps = LossComponents {
        diag: tape.value(diag).data()[0],
        align: 0.0,
        concept: tape.value(concept).data()[0],
    };
    let wa = align_weight(weights, kind, ablation);
    if wa > 0.0 {
        let p_c = graph.p_c.ok_or_else(|| Error::Config("align term needs p_c".into()))?;
        let a = tape.cosine_align_loss(graph.p_t, p_c)?;
        comps.align = tape.value(a).data()[0];
        parts.push(tape.scale(a, wa));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = tape.add(total, p)?;
    }
    Ok((total, comps))
}
