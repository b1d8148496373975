use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Note;

/// One lowercased token with its character offsets `[start, end)` in the
/// original text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_sentence_end(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?")
}

/// Splits on whitespace and punctuation. Alphanumeric runs become word
/// tokens; each other non-space character is its own token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if word.is_empty() {
                word_start = pos;
            }
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                tokens.push(Token {
                    text: std::mem::take(&mut word),
                    start: word_start,
                    end: pos,
                });
            }
            if !ch.is_whitespace() {
                tokens.push(Token {
                    text: ch.to_lowercase().collect(),
                    start: pos,
                    end: pos + 1,
                });
            }
        }
        pos += 1;
    }
    if !word.is_empty() {
        tokens.push(Token {
            text: word,
            start: word_start,
            end: pos,
        });
    }
    tokens
}

/// Indices of sentence-final tokens (`.`, `!`, `?`).
pub fn sentence_breaks(tokens: &[Token]) -> Vec<usize> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| is_sentence_end(&t.text))
        .map(|(i, _)| i)
        .collect()
}

/// Lowercased token strings of a phrase.
pub fn phrase_tokens(phrase: &str) -> Vec<String> {
    tokenize(phrase).into_iter().map(|t| t.text).collect()
}

pub const CLS_TOKEN: &str = "[CLS]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Token-to-id table for the encoder. Ids 0, 1 and 2 are reserved for
/// `[CLS]`, `[UNK]` and `[MASK]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for TokenVocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        TokenVocab { tokens, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.tokens
    }
}

impl TokenVocab {
    pub const CLS: usize = 0;
    pub const UNK: usize = 1;
    pub const MASK: usize = 2;

    /// Specials followed by every distinct token of `notes` in sorted order.
    pub fn build<'a>(notes: impl IntoIterator<Item = &'a Note>) -> Self {
        let distinct: BTreeSet<&str> = notes
            .into_iter()
            .flat_map(|n| n.tokens.iter().map(|t| t.text.as_str()))
            .collect();
        let mut tokens = vec![CLS_TOKEN.to_string(), UNK_TOKEN.to_string(), MASK_TOKEN.to_string()];
        tokens.extend(
            distinct
                .into_iter()
                .filter(|t| ![CLS_TOKEN, UNK_TOKEN, MASK_TOKEN].contains(t))
                .map(str::to_string),
        );
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Ids of a note's tokens, without the leading `[CLS]`.
    pub fn encode(&self, note: &Note) -> Vec<usize> {
        note.tokens.iter().map(|t| self.id(&t.text)).collect()
    }
}
