use serde::{Deserialize, Serialize};

use super::jacobian::{common_surface_gradient, head_gradient};
use super::{PairReport, PairSelection, PairValue, TopCMap};
use crate::corpus::Note;
use crate::error::{Error, Result};
use crate::evalstat::PredictionSet;
use crate::model::Model;

/// Gradient surface for CIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CimSurface {
    /// Diagnosis-head input: `p_c` for MCB, `ĉ` for VCBM.
    Head,
    /// Encoder output `p_t`.
    Common,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient norm of logit `j` at `surface` for every note `i` and positive
/// label `j`; `NaN` elsewhere. `notes[i]` is the note of prediction row `i`.
pub fn cim_norms(model: &Model, notes: &[&Note], pred: &PredictionSet, surface: CimSurface) -> Result<Vec<Vec<f64>>> {
    pred.validate()?;
    if notes.len() != pred.len() || notes.iter().zip(&pred.ids).any(|(n, id)| &n.id != id) {
        return Err(Error::Input("notes do not match the prediction rows".into()));
    }
    if pred.num_labels() != model.labels.len() || pred.num_concepts() != model.concepts.len() {
        return Err(Error::Input(
            "predictions and model differ in labels or concepts".into(),
        ));
    }
    let l = pred.num_labels();
    let mut norms = vec![vec![f64::NAN; l]; pred.len()];
    for (i, note) in notes.iter().enumerate() {
        if !pred.labels[i].contains(&1) {
            continue;
        }
        let out = model.forward(note)?;
        for j in (0..l).filter(|&j| pred.labels[i][j] == 1) {
            let g = match surface {
                CimSurface::Head => head_gradient(model, &out, j)?,
                CimSurface::Common => common_surface_gradient(model, &out, j)?,
            };
            norms[i][j] = l2(&g);
        }
    }
    Ok(norms)
}

/// Per-pair CIM from precomputed [`cim_norms`]: the mean norm over
/// `copos(c, j) = {i : c̃_ic = 1, y_ij = 1}` for every selected pair with
/// non-empty `copos`.
pub fn cim_from_norms(pred: &PredictionSet, norms: &[Vec<f64>], selection: PairSelection<'_>) -> Result<PairReport> {
    if norms.len() != pred.len() {
        return Err(Error::Input("gradient norms and predictions differ in rows".into()));
    }
    let mut pairs = Vec::new();
    for (c, j) in selection.pairs(pred.num_concepts(), pred.num_labels()) {
        let vals: Vec<f64> = (0..pred.len())
            .filter(|&i| pred.pseudo[i][c] == 1 && pred.labels[i][j] == 1)
            .map(|i| norms[i][j])
            .collect();
        if !vals.is_empty() {
            pairs.push(PairValue {
                concept: c,
                label: j,
                value: vals.iter().sum::<f64>() / vals.len() as f64,
                support: vals.len(),
            });
        }
    }
    PairReport::from_pairs(pairs, "CIM")
}

/// Concept influence magnitude at `surface` over the selected pairs.
pub fn cim(
    model: &Model,
    notes: &[&Note],
    pred: &PredictionSet,
    selection: PairSelection<'_>,
    surface: CimSurface,
) -> Result<PairReport> {
    let norms = cim_norms(model, notes, pred, surface)?;
    cim_from_norms(pred, &norms, selection)
}

/// CIM at the diagnosis-head input over TopC pairs.
pub fn cim_head(model: &Model, notes: &[&Note], pred: &PredictionSet, topc: &TopCMap) -> Result<PairReport> {
    cim(model, notes, pred, PairSelection::TopC(topc), CimSurface::Head)
}

/// CIM at `p_t` over TopC pairs.
pub fn cim_common_surface(model: &Model, notes: &[&Note], pred: &PredictionSet, topc: &TopCMap) -> Result<PairReport> {
    cim(model, notes, pred, PairSelection::TopC(topc), CimSurface::Common)
}
