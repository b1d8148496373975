//! Loss functions and their analytic gradients.
//!
//! All losses are mean-reduced over their vector argument.

use super::tape::sigmoid;
use crate::error::{Error, Result};

/// Activations are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before taking logs.
pub const BCE_CLAMP: f64 = 1e-12;

/// Guard added to the norm product in the cosine loss.
pub const COSINE_EPS: f64 = 1e-8;

fn check_binary(name: &str, t: &[f64]) -> Result<()> {
    if t.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input(format!("{name} targets must be 0 or 1")));
    }
    Ok(())
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("loss", format!("{a} predictions vs {b} targets")));
    }
    Ok(())
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Binary focal loss on logits.
///
/// Per label `-α_t (1 - p_t)^γ log p_t`, where `p_t = σ(ℓ)` and `α_t = α`
/// for positives, `p_t = 1 - σ(ℓ)` and `α_t = 1 - α` for negatives.
pub fn focal_loss(logits: &[f64], targets: &[f64], gamma: f64, alpha: f64) -> Result<f64> {
    check_len(logits.len(), targets.len())?;
    check_binary("focal", targets)?;
    if gamma < 0.0 || !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!(
            "focal loss needs gamma >= 0 and alpha in (0, 1], got {gamma}, {alpha}"
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| {
            let s = if t == 1.0 { 1.0 } else { -1.0 };
            let a = if t == 1.0 { alpha } else { 1.0 - alpha };
            let log_pt = -softplus(-s * l);
            let one_minus_pt = sigmoid(-s * l);
            -a * one_minus_pt.powf(gamma) * log_pt
        })
        .sum();
    Ok(total / logits.len() as f64)
}

pub(crate) fn focal_loss_grad(logits: &[f64], targets: &[f64], gamma: f64, alpha: f64) -> Vec<f64> {
    let n = logits.len().max(1) as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(&l, &t)| {
            let s = if t == 1.0 { 1.0 } else { -1.0 };
            let a = if t == 1.0 { alpha } else { 1.0 - alpha };
            let pt = sigmoid(s * l);
            let log_pt = -softplus(-s * l);
            let q = sigmoid(-s * l);
            // d/dℓ of -a (1-p_t)^γ log p_t, using dp_t/dℓ = s p_t (1-p_t).
            a * s * q.powf(gamma) * (gamma * pt * log_pt - q) / n
        })
        .collect()
}

/// Mean binary cross-entropy between activations in (0, 1) and 0/1 targets.
pub fn bce_loss(act: &[f64], targets: &[f64]) -> Result<f64> {
    check_len(act.len(), targets.len())?;
    check_binary("bce", targets)?;
    if act.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = act
        .iter()
        .zip(targets)
        .map(|(&a, &t)| {
            let a = a.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(t * a.ln() + (1.0 - t) * (1.0 - a).ln())
        })
        .sum();
    Ok(total / act.len() as f64)
}

pub(crate) fn bce_loss_grad(act: &[f64], targets: &[f64]) -> Vec<f64> {
    let n = act.len().max(1) as f64;
    act.iter()
        .zip(targets)
        .map(|(&a, &t)| {
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&a) {
                return 0.0;
            }
            (-t / a + (1.0 - t) / (1.0 - a)) / n
        })
        .collect()
}

/// `1 - a·b / (‖a‖‖b‖ + 1e-8)`.
pub fn cosine_align_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(1.0 - dot / (na * nb + COSINE_EPS))
}

pub(crate) fn cosine_align_loss_grad(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na * nb + COSINE_EPS;
    let side = |x: &[f64], other: &[f64], nx: f64, nother: f64| -> Vec<f64> {
        x.iter()
            .zip(other)
            .map(|(&xi, &oi)| {
                let dnorm = if nx > 0.0 { nother * xi / nx } else { 0.0 };
                -(oi / denom - dot * dnorm / (denom * denom))
            })
            .collect()
    };
    (side(a, b, na, nb), side(b, a, nb, na))
}
