use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::objective::{joint_loss_graph, LossComponents};
use super::Model;
use crate::corpus::{Dataset, Note, Split, TokenVocab};
use crate::error::{Error, Result};
use crate::evalstat::{f1_scores, PredictionSet};
use crate::negex::{pseudo_label, TriggerLexicon};
use crate::numcore::{OptimState, Tape};

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted objective over training notes.
    pub loss: f64,
    /// Mean unweighted components.
    pub components: LossComponents,
    pub val_macro_f1: f64,
    pub val_micro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters from the epoch with the best validation Macro-F1.
    pub model: Model,
    pub curves: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Stored pseudo-labels, or NegEx labels with the default lexicon.
pub fn resolve_pseudo_labels(dataset: &Dataset) -> Vec<Vec<u8>> {
    let lexicon = TriggerLexicon::default();
    dataset
        .notes
        .iter()
        .map(|n| {
            n.pseudo_labels
                .clone()
                .unwrap_or_else(|| pseudo_label(n, &dataset.vocabulary, &lexicon))
        })
        .collect()
}

/// Predictions of `model` on `notes` with pseudo-labels `pseudo`.
pub fn predict(model: &Model, notes: &[&Note], pseudo: &[Vec<u8>], tau: f64) -> Result<PredictionSet> {
    let mut scores = Vec::with_capacity(notes.len());
    let mut concepts = Vec::with_capacity(notes.len());
    for note in notes {
        let out = model.forward(note)?;
        scores.push(out.probabilities());
        concepts.push(out.c_hat.data().to_vec());
    }
    PredictionSet::new(
        notes.iter().map(|n| n.id.clone()).collect(),
        model.labels.codes().to_vec(),
        model.concepts.names().to_vec(),
        tau,
        scores,
        notes.iter().map(|n| n.labels.clone()).collect(),
        concepts,
        pseudo.to_vec(),
    )
}

/// Builds a fresh model on the training vocabulary and trains it.
pub fn train_model(dataset: &Dataset, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainResult> {
    let vocab = TokenVocab::build(dataset.split_notes(Split::Train));
    let model = Model::new(
        model_config.clone(),
        vocab,
        dataset.vocabulary.clone(),
        dataset.label_space.clone(),
    )?;
    train_from(model, dataset, config)
}

/// Trains `model` in place with mini-batch AdamW and returns the best
/// validation checkpoint.
pub fn train_from(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    dataset.validate()?;
    if dataset.vocabulary != model.concepts || dataset.label_space != model.labels {
        return Err(Error::Config("dataset and model disagree on concepts or labels".into()));
    }
    let train = dataset.split_indices(Split::Train);
    let val = dataset.split_indices(Split::Val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Input("training needs non-empty train and val splits".into()));
    }
    let pseudo = resolve_pseudo_labels(dataset);
    let ids: Vec<Vec<usize>> = dataset.notes.iter().map(|n| model.note_ids(n)).collect();
    let val_notes: Vec<&Note> = val.iter().map(|&i| &dataset.notes[i]).collect();
    let val_pseudo: Vec<Vec<u8>> = val.iter().map(|&i| pseudo[i].clone()).collect();

    let batches_per_epoch = train.len().div_ceil(config.batch_size);
    let mut opt = OptimState::new(&model.params, config.optimizer, config.epochs * batches_per_epoch)?;
    let (kind, ablation) = (model.config.kind, model.config.ablation);
    let mut curves = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::numcore::ParamStore)> = None;

    for epoch in 1..=config.epochs {
        let mut order = train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut comp_sum) = (0.0, LossComponents::default());
        for batch in order.chunks(config.batch_size) {
            model.params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (value, comps, grads, bound) = {
                    let mut tape = Tape::new();
                    let bound = model.params.bind(&mut tape);
                    let graph = model.build_graph(&mut tape, &bound, &ids[i])?;
                    let (total, comps) = joint_loss_graph(
                        &mut tape,
                        &graph,
                        kind,
                        &dataset.notes[i].labels,
                        &pseudo[i],
                        &config.loss,
                        ablation,
                    )?;
                    let value = tape.value(total).data()[0];
                    if !value.is_finite() {
                        return Err(Error::Diverged(format!(
                            "non-finite loss {value} at epoch {epoch}, step {}, note {}",
                            opt.step + 1,
                            dataset.notes[i].id
                        )));
                    }
                    (value, comps, tape.backward(total)?, bound)
                };
                model.params.accumulate(&bound, &grads, scale);
                loss_sum += value;
                comp_sum.diag += comps.diag;
                comp_sum.align += comps.align;
                comp_sum.concept += comps.concept;
            }
            if model.params.iter().any(|p| !p.grad.all_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite gradient at epoch {epoch}, step {}",
                    opt.step + 1
                )));
            }
            opt.step(&mut model.params)?;
        }
        let n = train.len() as f64;
        let pred = predict(&model, &val_notes, &val_pseudo, config.tau)?;
        let f1 = f1_scores(&pred)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / n,
            components: LossComponents {
                diag: comp_sum.diag / n,
                align: comp_sum.align / n,
                concept: comp_sum.concept / n,
            },
            val_macro_f1: f1.macro_f1,
            val_micro_f1: f1.micro_f1,
        };
        info!(
            "epoch {epoch}: loss {:.5} val macro-F1 {:.4} micro-F1 {:.4}",
            record.loss, record.val_macro_f1, record.val_micro_f1
        );
        if best.as_ref().is_none_or(|b| record.val_macro_f1 > b.0) {
            best = Some((record.val_macro_f1, epoch, model.params.clone()));
        }
        curves.push(record);
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    for p in model.params.iter_mut() {
        p.grad.fill(0.0);
    }
    let mut best_params = params;
    best_params.zero_grad();
    model.params = best_params;
    Ok(TrainResult {
        model,
        curves,
        best_epoch,
    })
}
