//! Concept-faithfulness measures: TopC maps, CSTPR, CIM at two gradient
//! surfaces, CCR, and the concept-mask intervention.

mod cim;
mod intervene;
mod jacobian;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalstat::PredictionSet;

pub use cim::{cim, cim_common_surface, cim_from_norms, cim_head, cim_norms, CimSurface};
pub use intervene::{mask_intervention, masked_token_spans, InterventionRecord, InterventionReport};
pub use jacobian::{common_surface_gradient, common_surface_gradient_autodiff, head_gradient, head_gradient_autodiff};

/// Concepts per label in a TopC map.
pub const TOPC_K: usize = 5;

/// ĉ threshold for a concept to count as predicted.
pub const CONCEPT_THRESHOLD: f64 = 0.5;

/// Per label, the `k` concepts with the highest Pearson correlation to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCMap {
    pub k: usize,
    /// `entries[j]` lists `(concept, r)` in rank order.
    pub entries: Vec<Vec<(usize, f64)>>,
    /// Concepts whose column is constant; their correlation is set to 0.
    pub zero_variance: Vec<usize>,
}

impl TopCMap {
    pub fn num_labels(&self) -> usize {
        self.entries.len()
    }

    pub fn concepts(&self, label: usize) -> impl Iterator<Item = usize> + '_ {
        self.entries[label].iter().map(|e| e.0)
    }

    /// `(concept, label)` pairs with `concept ∈ TopC(label)`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.num_labels())
            .flat_map(|j| self.concepts(j).map(move |c| (c, j)))
            .collect()
    }
}

/// Pearson correlation of two binary columns; 0 when either is constant.
pub fn pearson(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a as f64 - mx, b as f64 - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// TopC map from training pseudo-labels `c̃` and labels `y` (rows are notes).
/// Ties in `r` go to the lower concept index.
pub fn build_topc(pseudo: &[Vec<u8>], labels: &[Vec<u8>], k: usize) -> Result<TopCMap> {
    if pseudo.is_empty() {
        return Err(Error::Input("TopC needs a non-empty training split".into()));
    }
    if pseudo.len() != labels.len() {
        return Err(Error::Input("pseudo-label and label rows differ in count".into()));
    }
    let c = pseudo[0].len();
    let l = labels[0].len();
    if pseudo.iter().any(|r| r.len() != c) || labels.iter().any(|r| r.len() != l) {
        return Err(Error::Input("ragged pseudo-label or label rows".into()));
    }
    let column = |rows: &[Vec<u8>], k: usize| rows.iter().map(|r| r[k]).collect::<Vec<u8>>();
    let concept_cols: Vec<Vec<u8>> = (0..c).map(|k| column(pseudo, k)).collect();
    let zero_variance = concept_cols
        .iter()
        .enumerate()
        .filter(|(_, col)| col.iter().all(|&v| v == col[0]))
        .map(|(k, _)| k)
        .collect();
    let entries = (0..l)
        .map(|j| {
            let y = column(labels, j);
            let mut r: Vec<(usize, f64)> = concept_cols
                .iter()
                .enumerate()
                .map(|(k, col)| (k, pearson(col, &y)))
                .collect();
            r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            r.truncate(k.min(c));
            r
        })
        .collect();
    Ok(TopCMap {
        k,
        entries,
        zero_variance,
    })
}

/// Value of one `(concept, label)` pair and the number of samples behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairValue {
    pub concept: usize,
    pub label: usize,
    pub value: f64,
    pub support: usize,
}

/// Per-pair values and their mean over pairs with support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pairs: Vec<PairValue>,
    pub aggregate: f64,
}

impl PairReport {
    fn from_pairs(pairs: Vec<PairValue>, what: &str) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Input(format!("{what}: no concept/label pair has support")));
        }
        let aggregate = pairs.iter().map(|p| p.value).sum::<f64>() / pairs.len() as f64;
        Ok(PairReport { pairs, aggregate })
    }
}

/// Which `(concept, label)` pairs a pairwise measure ranges over.
#[derive(Debug, Clone, Copy)]
pub enum PairSelection<'a> {
    TopC(&'a TopCMap),
    All,
}

impl PairSelection<'_> {
    fn pairs(&self, concepts: usize, labels: usize) -> Vec<(usize, usize)> {
        match self {
            PairSelection::TopC(t) => t.pairs(),
            PairSelection::All => (0..labels).flat_map(|j| (0..concepts).map(move |c| (c, j))).collect(),
        }
    }
}

fn check_topc(pred: &PredictionSet, topc: &TopCMap) -> Result<()> {
    pred.validate()?;
    if topc.num_labels() != pred.num_labels() {
        return Err(Error::Input("TopC map and predictions differ in label count".into()));
    }
    if topc.entries.iter().flatten().any(|&(c, _)| c >= pred.num_concepts()) {
        return Err(Error::Input("TopC map names a concept outside the vocabulary".into()));
    }
    Ok(())
}

/// CSTPR result. Labels without positives are `None` and left out of the
/// macro mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cstpr {
    pub macro_value: f64,
    pub per_label: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// Share of positives that are predicted and backed by a TopC concept with
/// `ĉ > 0.5` and `c̃ = 1`.
pub fn cstpr(pred: &PredictionSet, topc: &TopCMap) -> Result<Cstpr> {
    check_topc(pred, topc)?;
    let mut per_label = Vec::with_capacity(pred.num_labels());
    let mut excluded = Vec::new();
    for j in 0..pred.num_labels() {
        let (mut num, mut den) = (0usize, 0usize);
        for i in 0..pred.len() {
            if pred.labels[i][j] != 1 {
                continue;
            }
            den += 1;
            let supported = topc
                .concepts(j)
                .any(|c| pred.concepts[i][c] > CONCEPT_THRESHOLD && pred.pseudo[i][c] == 1);
            if pred.decisions[i][j] == 1 && supported {
                num += 1;
            }
        }
        if den == 0 {
            excluded.push(j);
            per_label.push(None);
        } else {
            per_label.push(Some(num as f64 / den as f64));
        }
    }
    let vals: Vec<f64> = per_label.iter().flatten().copied().collect();
    if vals.is_empty() {
        return Err(Error::Input("CSTPR: no label has a positive sample".into()));
    }
    Ok(Cstpr {
        macro_value: vals.iter().sum::<f64>() / vals.len() as f64,
        per_label,
        excluded,
    })
}

/// Concept-conditioned recall over `(j, c ∈ TopC(j))` pairs with support.
pub fn ccr(pred: &PredictionSet, topc: &TopCMap) -> Result<PairReport> {
    check_topc(pred, topc)?;
    ccr_pairs(pred, PairSelection::TopC(topc))
}

/// Concept-conditioned recall over an explicit pair selection.
pub fn ccr_pairs(pred: &PredictionSet, selection: PairSelection<'_>) -> Result<PairReport> {
    pred.validate()?;
    let mut out = Vec::new();
    for (c, j) in selection.pairs(pred.num_concepts(), pred.num_labels()) {
        let (mut hit, mut support) = (0usize, 0usize);
        for i in 0..pred.len() {
            if pred.labels[i][j] == 1 && pred.pseudo[i][c] == 1 {
                support += 1;
                hit += pred.decisions[i][j] as usize;
            }
        }
        if support > 0 {
            out.push(PairValue {
                concept: c,
                label: j,
                value: hit as f64 / support as f64,
                support,
            });
        }
    }
    PairReport::from_pairs(out, "CCR")
}
