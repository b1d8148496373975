//! Multi-label metrics at a fixed threshold, long-tail bins, and the
//! bootstrap / sign-test harness.

mod dump;
mod metrics;
mod stats;

use crate::error::{Error, Result};

pub use dump::{load_predictions, read_predictions, save_predictions, write_predictions};
pub use metrics::{
    auc_scores, default_bin_sizes, f1_scores, longtail_binned_f1, precision_recall_decomposition, top_k_indices,
    topk_metrics, AucScores, BinF1, F1Scores, Metric, PrDecomposition, TopK,
};
pub use stats::{bootstrap_ci, paired_bootstrap, percentile, resample, sign_test, BootstrapResult};

pub const DEFAULT_TAU: f64 = 0.5;

/// Per-note model outputs for one evaluation split. Rows are notes.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub ids: Vec<String>,
    pub label_codes: Vec<String>,
    pub concept_names: Vec<String>,
    pub tau: f64,
    /// Diagnosis probabilities, N x L.
    pub scores: Vec<Vec<f64>>,
    /// `1[score > tau]`, N x L.
    pub decisions: Vec<Vec<u8>>,
    pub labels: Vec<Vec<u8>>,
    /// Concept activations ĉ, N x C.
    pub concepts: Vec<Vec<f64>>,
    /// Pseudo-labels c̃, N x C.
    pub pseudo: Vec<Vec<u8>>,
}

impl PredictionSet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ids: Vec<String>,
        label_codes: Vec<String>,
        concept_names: Vec<String>,
        tau: f64,
        scores: Vec<Vec<f64>>,
        labels: Vec<Vec<u8>>,
        concepts: Vec<Vec<f64>>,
        pseudo: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
        }
        let decisions = scores
            .iter()
            .map(|r| r.iter().map(|&s| u8::from(s > tau)).collect())
            .collect();
        let set = PredictionSet {
            ids,
            label_codes,
            concept_names,
            tau,
            scores,
            decisions,
            labels,
            concepts,
            pseudo,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scores.len();
        let (l, c) = (self.label_codes.len(), self.concept_names.len());
        fn ok<T>(rows: &[Vec<T>], n: usize, width: usize) -> bool {
            rows.len() == n && rows.iter().all(|r| r.len() == width)
        }
        if self.ids.len() != n
            || !ok(&self.scores, n, l)
            || !ok(&self.decisions, n, l)
            || !ok(&self.labels, n, l)
            || !ok(&self.concepts, n, c)
            || !ok(&self.pseudo, n, c)
        {
            return Err(Error::shape(
                "prediction set",
                format!("expected {n} rows of {l} labels and {c} concepts"),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.label_codes.len()
    }

    pub fn num_concepts(&self) -> usize {
        self.concept_names.len()
    }

    /// Rows `idx` (repeats allowed), in that order.
    pub fn select(&self, idx: &[usize]) -> PredictionSet {
        let pick = |v: &Vec<Vec<u8>>| idx.iter().map(|&i| v[i].clone()).collect();
        let pickf = |v: &Vec<Vec<f64>>| idx.iter().map(|&i| v[i].clone()).collect();
        PredictionSet {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            label_codes: self.label_codes.clone(),
            concept_names: self.concept_names.clone(),
            tau: self.tau,
            scores: pickf(&self.scores),
            decisions: pick(&self.decisions),
            labels: pick(&self.labels),
            concepts: pickf(&self.concepts),
            pseudo: pick(&self.pseudo),
        }
    }

    /// Same predictions with decisions taken directly from `decisions`
    /// (scores left untouched). Useful for hand-built cases.
    pub fn with_decisions(mut self, decisions: Vec<Vec<u8>>) -> Result<Self> {
        self.decisions = decisions;
        self.validate()?;
        Ok(self)
    }
}
