//! Notes, vocabularies and datasets, plus the synthetic corpus generator.

mod filter;
mod generator;
mod io;
mod split;
mod tokenize;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::concept_support_filter;
pub use generator::{generate_corpus, GeneratorConfig, LabelMap, LabelRule, MappingMode, DEFAULT_CONCEPT_NAMES};
pub use io::{load_dataset, persist_roundtrip, read_dataset, save_dataset, write_dataset, FORMAT_VERSION};
pub use split::{split_counts, split_dataset};
pub use tokenize::{phrase_tokens, sentence_breaks, tokenize, Token, TokenVocab, MASK_TOKEN};

/// Ordered concept names; the position of a name is its identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ConceptVocabulary {
    names: Vec<String>,
}

impl ConceptVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Input("concept vocabulary is empty".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() || *n != n.to_lowercase() {
                return Err(Error::Input(format!("concept name {n:?} must be non-empty lowercase")));
            }
            if !seen.insert(n) {
                return Err(Error::Input(format!("duplicate concept {n:?}")));
            }
        }
        Ok(ConceptVocabulary { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for ConceptVocabulary {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        ConceptVocabulary::new(v)
    }
}

impl From<ConceptVocabulary> for Vec<String> {
    fn from(v: ConceptVocabulary) -> Self {
        v.names
    }
}

/// Ordered label (diagnosis code) identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    codes: Vec<String>,
}

impl LabelSpace {
    pub fn new(codes: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        if let Some(dup) = codes.iter().find(|c| !seen.insert(*c)) {
            return Err(Error::Input(format!("duplicate label {dup:?}")));
        }
        Ok(LabelSpace { codes })
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        LabelSpace::new(v)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(v: LabelSpace) -> Self {
        v.codes
    }
}

/// A concept occurrence written by the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedMention {
    pub concept: usize,
    pub negated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Note {
    pub id: String,
    pub text: String,
    pub tokens: Vec<Token>,
    pub sentence_breaks: Vec<usize>,
    /// Generator ground truth: concept present (asserted) in the note.
    pub true_concepts: Vec<u8>,
    /// Generator bookkeeping for every written occurrence, in text order.
    pub mentions: Vec<GeneratedMention>,
    pub labels: Vec<u8>,
    /// NegEx pseudo-labels, once computed.
    pub pseudo_labels: Option<Vec<u8>>,
}

impl Note {
    pub fn new(id: impl Into<String>, text: impl Into<String>, true_concepts: Vec<u8>, labels: Vec<u8>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        let sentence_breaks = sentence_breaks(&tokens);
        Note {
            id: id.into(),
            text,
            tokens,
            sentence_breaks,
            true_concepts,
            mentions: Vec::new(),
            labels,
            pseudo_labels: None,
        }
    }

    pub fn with_mentions(mut self, mentions: Vec<GeneratedMention>) -> Self {
        self.mentions = mentions;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocabulary: ConceptVocabulary,
    pub label_space: LabelSpace,
    pub notes: Vec<Note>,
    /// Split of each note, parallel to `notes`.
    pub splits: Vec<Split>,
}

impl Dataset {
    /// Checks that every note's vectors match the vocabulary and label space.
    pub fn validate(&self) -> Result<()> {
        if self.splits.len() != self.notes.len() {
            return Err(Error::Input("split assignment length differs from note count".into()));
        }
        let (c, l) = (self.vocabulary.len(), self.label_space.len());
        for n in &self.notes {
            if n.true_concepts.len() != c || n.labels.len() != l {
                return Err(Error::Input(format!(
                    "note {} has {} concepts / {} labels, expected {c} / {l}",
                    n.id,
                    n.true_concepts.len(),
                    n.labels.len()
                )));
            }
            if n.pseudo_labels.as_ref().is_some_and(|p| p.len() != c) {
                return Err(Error::Input(format!("note {} pseudo-label length", n.id)));
            }
            if n.mentions.iter().any(|m| m.concept >= c) {
                return Err(Error::Input(format!("note {} mention index out of range", n.id)));
            }
        }
        Ok(())
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn split_notes(&self, split: Split) -> Vec<&Note> {
        self.split_indices(split).into_iter().map(|i| &self.notes[i]).collect()
    }
}
