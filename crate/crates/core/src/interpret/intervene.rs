use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::TopCMap;
use crate::corpus::{Note, TokenVocab};
use crate::error::{Error, Result};
use crate::evalstat::{bootstrap_ci, sign_test, PredictionSet};
use crate::model::Model;

/// One sampled (note, target label) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub note_id: String,
    pub label: usize,
    /// Masked token ranges `[start, end)` in note token indices.
    pub masked_spans: Vec<(usize, usize)>,
    pub p_before: f64,
    pub p_after: f64,
    /// Mean drop over the note's other positive labels; 0 when there are none.
    pub control_drop: f64,
    pub valid: bool,
}

impl InterventionRecord {
    pub fn target_drop(&self) -> f64 {
        self.p_before - self.p_after
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub records: Vec<InterventionRecord>,
    pub sampled_pairs: usize,
    pub valid_pairs: usize,
    pub mean_target_drop: f64,
    pub mean_control_drop: f64,
    pub mean_difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Pairs whose target drop exceeds the control drop.
    pub wins: usize,
    /// Pairs with equal drops; left out of the sign test.
    pub ties: usize,
    pub sign_test_p: f64,
    pub replicates: usize,
    pub seed: u64,
}

fn word_regex(name: &str) -> Result<Regex> {
    Regex::new(&format!(r"(?i)\b{}\b", regex::escape(name)))
        .map_err(|e| Error::Input(format!("bad concept name {name:?}: {e}")))
}

/// Token ranges of `note` covered by case-insensitive whole-word matches of
/// any of `names`, merged where they touch.
pub fn masked_token_spans(note: &Note, names: &[&str]) -> Result<Vec<(usize, usize)>> {
    let regexes = names.iter().map(|n| word_regex(n)).collect::<Result<Vec<_>>>()?;
    Ok(spans_for(note, &regexes))
}

fn spans_for(note: &Note, regexes: &[Regex]) -> Vec<(usize, usize)> {
    let char_at = |byte: usize| note.text[..byte].chars().count();
    let mut hit = vec![false; note.tokens.len()];
    for re in regexes {
        for m in re.find_iter(&note.text) {
            let chars: Range<usize> = char_at(m.start())..char_at(m.end());
            for (t, tok) in note.tokens.iter().enumerate() {
                if tok.start < chars.end && chars.start < tok.end {
                    hit[t] = true;
                }
            }
        }
    }
    let mut spans: Vec<(usize, usize)> = Vec::new();
    for (t, &h) in hit.iter().enumerate() {
        if !h {
            continue;
        }
        match spans.last_mut() {
            Some(s) if s.1 == t => s.1 = t + 1,
            _ => spans.push((t, t + 1)),
        }
    }
    spans
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Concept-mask intervention over correctly predicted positive pairs.
///
/// Pairs `(i, j)` with `y_ij = ŷ_ij = 1` are shuffled with `seed` and the
/// first `n_pairs` kept. For each, every whole-word occurrence of a
/// `TopC(j)` name (any polarity) is replaced by `[MASK]`. The target drop
/// is compared with the mean drop of the note's other positive labels on
/// the same masked input. Pairs with nothing to mask are invalid.
pub fn mask_intervention(
    model: &Model,
    notes: &[&Note],
    pred: &PredictionSet,
    topc: &TopCMap,
    n_pairs: usize,
    replicates: usize,
    seed: u64,
) -> Result<InterventionReport> {
    pred.validate()?;
    if notes.len() != pred.len() || notes.iter().zip(&pred.ids).any(|(n, id)| &n.id != id) {
        return Err(Error::Input("notes do not match the prediction rows".into()));
    }
    if topc.num_labels() != pred.num_labels() || pred.num_labels() != model.labels.len() {
        return Err(Error::Input(
            "TopC map, predictions and model differ in label count".into(),
        ));
    }
    let names = model.concepts.names();
    let label_regexes = (0..topc.num_labels())
        .map(|j| {
            topc.concepts(j)
                .map(|c| {
                    names
                        .get(c)
                        .ok_or_else(|| Error::Input(format!("concept index {c} out of range")))
                        .and_then(|n| word_regex(n))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut candidates: Vec<(usize, usize)> = (0..pred.len())
        .flat_map(|i| (0..pred.num_labels()).map(move |j| (i, j)))
        .filter(|&(i, j)| pred.labels[i][j] == 1 && pred.decisions[i][j] == 1)
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    candidates.truncate(n_pairs);

    let mut records = Vec::with_capacity(candidates.len());
    let mut cache: Option<(usize, Vec<f64>)> = None;
    for &(i, j) in &candidates {
        let note = notes[i];
        let before = match &cache {
            Some((ci, p)) if *ci == i => p.clone(),
            _ => {
                let p = model.forward(note)?.probabilities();
                cache = Some((i, p.clone()));
                p
            }
        };
        let spans = spans_for(note, &label_regexes[j]);
        let valid = !spans.is_empty();
        let after = if valid {
            let mut ids = model.vocab.encode(note);
            for &(s, e) in &spans {
                ids[s..e].fill(TokenVocab::MASK);
            }
            model.forward_ids(&model.input_ids(&ids))?.probabilities()
        } else {
            before.clone()
        };
        let others: Vec<f64> = (0..pred.num_labels())
            .filter(|&k| k != j && pred.labels[i][k] == 1)
            .map(|k| before[k] - after[k])
            .collect();
        records.push(InterventionRecord {
            note_id: note.id.clone(),
            label: j,
            masked_spans: spans,
            p_before: before[j],
            p_after: after[j],
            control_drop: if others.is_empty() { 0.0 } else { mean(&others) },
            valid,
        });
    }

    let valid: Vec<&InterventionRecord> = records.iter().filter(|r| r.valid).collect();
    if valid.is_empty() {
        return Err(Error::Input(
            "intervention: no sampled pair contains a TopC mention".into(),
        ));
    }
    let target: Vec<f64> = valid.iter().map(|r| r.target_drop()).collect();
    let control: Vec<f64> = valid.iter().map(|r| r.control_drop).collect();
    let diffs: Vec<f64> = target.iter().zip(&control).map(|(t, c)| t - c).collect();
    let (mean_difference, ci_low, ci_high) = bootstrap_ci(&diffs, mean, replicates, seed)?;
    let wins = diffs.iter().filter(|&&d| d > 0.0).count();
    let ties = diffs.iter().filter(|&&d| d == 0.0).count();
    let sign_test_p = sign_test(wins as u64, (diffs.len() - ties) as u64)?;
    Ok(InterventionReport {
        sampled_pairs: candidates.len(),
        valid_pairs: valid.len(),
        mean_target_drop: mean(&target),
        mean_control_drop: mean(&control),
        mean_difference,
        ci_low,
        ci_high,
        wins,
        ties,
        sign_test_p,
        replicates,
        seed,
        records,
    })
}
