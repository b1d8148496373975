//! Rule-based negation detection for concept pseudo-labels.
//!
//! Pre-triggers open a scope of up to six tokens to their right,
//! post-triggers up to six tokens to their left. A scope stops before a
//! sentence-final token or a contrastive conjunction in either direction.
//! Pseudo-triggers are matched first and never open a scope.

mod lexicon;

use std::collections::HashSet;
use std::ops::Range;

use crate::corpus::{phrase_tokens, ConceptVocabulary, Note, Token};
use crate::error::{Error, Result};

pub use lexicon::TriggerLexicon;

pub const SCOPE_TOKENS: usize = 6;
pub const CONJUNCTIONS: &[&str] = &["but", "however", "although", "yet"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationScope {
    pub trigger: Range<usize>,
    /// Token indices covered by the scope (may be empty).
    pub scope: Range<usize>,
    pub direction: Direction,
}

impl NegationScope {
    pub fn contains(&self, token: usize) -> bool {
        self.scope.contains(&token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMention {
    pub concept: usize,
    pub span: Range<usize>,
    pub negated: bool,
}

fn matches_at(tokens: &[Token], at: usize, phrase: &[String]) -> bool {
    at + phrase.len() <= tokens.len() && phrase.iter().zip(&tokens[at..]).all(|(p, t)| *p == t.text)
}

fn longest(tokens: &[Token], at: usize, list: &[Vec<String>]) -> usize {
    list.iter()
        .filter(|p| matches_at(tokens, at, p))
        .map(Vec::len)
        .max()
        .unwrap_or(0)
}

/// Whole-word, case-insensitive occurrences of every concept, ordered by
/// position. `negated` is left false.
pub fn find_mentions(note: &Note, vocab: &ConceptVocabulary) -> Vec<ConceptMention> {
    find_mentions_in(&note.tokens, vocab)
}

pub fn find_mentions_in(tokens: &[Token], vocab: &ConceptVocabulary) -> Vec<ConceptMention> {
    let mut out = Vec::new();
    for (k, name) in vocab.names().iter().enumerate() {
        let phrase = phrase_tokens(name);
        if phrase.is_empty() {
            continue;
        }
        for at in 0..tokens.len() {
            if matches_at(tokens, at, &phrase) {
                out.push(ConceptMention {
                    concept: k,
                    span: at..at + phrase.len(),
                    negated: false,
                });
            }
        }
    }
    out.sort_by_key(|m| (m.span.start, m.concept));
    out
}

/// Negation scopes of a note.
pub fn find_scopes(note: &Note, lexicon: &TriggerLexicon) -> Vec<NegationScope> {
    find_scopes_in(&note.tokens, &note.sentence_breaks, lexicon)
}

pub fn find_scopes_in(tokens: &[Token], sentence_breaks: &[usize], lexicon: &TriggerLexicon) -> Vec<NegationScope> {
    let breaks: HashSet<usize> = sentence_breaks.iter().copied().collect();
    let is_barrier = |i: usize| breaks.contains(&i) || CONJUNCTIONS.contains(&tokens[i].text.as_str());
    let n = tokens.len();
    let mut scopes = Vec::new();
    let mut i = 0;
    while i < n {
        let pseudo = longest(tokens, i, &lexicon.pseudo);
        if pseudo > 0 {
            i += pseudo;
            continue;
        }
        let pre = longest(tokens, i, &lexicon.pre);
        let post = longest(tokens, i, &lexicon.post);
        if pre == 0 && post == 0 {
            i += 1;
            continue;
        }
        if pre >= post {
            let start = i + pre;
            let mut end = start;
            while end < n && end < start + SCOPE_TOKENS && !is_barrier(end) {
                end += 1;
            }
            scopes.push(NegationScope {
                trigger: i..start,
                scope: start..end,
                direction: Direction::Forward,
            });
            i = start;
        } else {
            let mut start = i;
            while start > 0 && start + SCOPE_TOKENS > i && !is_barrier(start - 1) {
                start -= 1;
            }
            scopes.push(NegationScope {
                trigger: i..i + post,
                scope: start..i,
                direction: Direction::Backward,
            });
            i += post;
        }
    }
    scopes
}

/// Mentions with `negated` set: a mention is negated when any of its
/// tokens falls inside any scope.
pub fn classify_mentions(note: &Note, vocab: &ConceptVocabulary, lexicon: &TriggerLexicon) -> Vec<ConceptMention> {
    let scopes = find_scopes(note, lexicon);
    let mut mentions = find_mentions(note, vocab);
    for m in &mut mentions {
        m.negated = m.span.clone().any(|t| scopes.iter().any(|s| s.contains(t)));
    }
    mentions
}

/// c̃: concept k is 1 iff at least one of its mentions is not negated.
pub fn pseudo_label(note: &Note, vocab: &ConceptVocabulary, lexicon: &TriggerLexicon) -> Vec<u8> {
    let mut c = vec![0u8; vocab.len()];
    for m in classify_mentions(note, vocab, lexicon) {
        if !m.negated {
            c[m.concept] = 1;
        }
    }
    c
}

/// Keyword activations (concept mentioned at all, per note) and NegEx
/// activations summed over `notes`.
pub fn activation_counts<'a>(
    notes: impl IntoIterator<Item = &'a Note>,
    vocab: &ConceptVocabulary,
    lexicon: &TriggerLexicon,
) -> (usize, usize) {
    let (mut naive, mut negex) = (0, 0);
    for note in notes {
        let mentions = classify_mentions(note, vocab, lexicon);
        let mut seen = vec![false; vocab.len()];
        let mut pos = vec![false; vocab.len()];
        for m in mentions {
            seen[m.concept] = true;
            pos[m.concept] |= !m.negated;
        }
        naive += seen.iter().filter(|&&b| b).count();
        negex += pos.iter().filter(|&&b| b).count();
    }
    (naive, negex)
}

/// (naive − NegEx) / naive activations.
pub fn correction_rate<'a>(
    notes: impl IntoIterator<Item = &'a Note>,
    vocab: &ConceptVocabulary,
    lexicon: &TriggerLexicon,
) -> Result<f64> {
    let (naive, negex) = activation_counts(notes, vocab, lexicon);
    if naive == 0 {
        return Err(Error::Input("no keyword activations in sample".into()));
    }
    Ok((naive - negex) as f64 / naive as f64)
}
