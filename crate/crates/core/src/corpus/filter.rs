use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ConceptVocabulary, Dataset, Split};
use crate::error::{Error, Result};
use crate::negex::{pseudo_label, TriggerLexicon};

/// Keeps the concepts whose NegEx-positive rate over a random sample of
/// `sample_n` training notes is at least `min_fraction`, in original order.
pub fn concept_support_filter(
    dataset: &Dataset,
    min_fraction: f64,
    sample_n: usize,
    seed: u64,
) -> Result<ConceptVocabulary> {
    if !(min_fraction > 0.0 && min_fraction < 1.0) {
        return Err(Error::Config(format!(
            "min_fraction must lie in (0, 1), got {min_fraction}"
        )));
    }
    let train = dataset.split_indices(Split::Train);
    if sample_n == 0 || sample_n > train.len() {
        return Err(Error::Config(format!(
            "sample size {sample_n} must be in 1..={}",
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<usize> = train.choose_multiple(&mut rng, sample_n).copied().collect();
    let lexicon = TriggerLexicon::default();
    let mut positive = vec![0usize; dataset.vocabulary.len()];
    for &i in &sample {
        let c = pseudo_label(&dataset.notes[i], &dataset.vocabulary, &lexicon);
        for (p, v) in positive.iter_mut().zip(c) {
            *p += v as usize;
        }
    }
    let kept: Vec<String> = dataset
        .vocabulary
        .names()
        .iter()
        .zip(&positive)
        .filter(|(_, &p)| p as f64 >= min_fraction * sample_n as f64)
        .map(|(n, _)| n.clone())
        .collect();
    if kept.is_empty() {
        return Err(Error::Input(format!("no concept reaches support {min_fraction}")));
    }
    ConceptVocabulary::new(kept)
}
