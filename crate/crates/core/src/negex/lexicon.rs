use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::phrase_tokens;
use crate::error::{Error, Result};

const PRE: &[&str] = &[
    "no",
    "not",
    "without",
    "denies",
    "absent",
    "negative for",
    "no evidence of",
    "free of",
    "rules out",
];
const POST: &[&str] = &["was ruled out", "were negative", "not present"];
const PSEUDO: &[&str] = &["not only", "no increase", "without difficulty"];

/// Trigger phrases, each stored as its lowercased token sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerLexicon {
    pub pre: Vec<Vec<String>>,
    pub post: Vec<Vec<String>>,
    pub pseudo: Vec<Vec<String>>,
}

fn phrases(list: &[&str]) -> Vec<Vec<String>> {
    list.iter().map(|p| phrase_tokens(p)).collect()
}

impl Default for TriggerLexicon {
    fn default() -> Self {
        TriggerLexicon {
            pre: phrases(PRE),
            post: phrases(POST),
            pseudo: phrases(PSEUDO),
        }
    }
}

impl TriggerLexicon {
    pub fn new(pre: Vec<Vec<String>>, post: Vec<Vec<String>>, pseudo: Vec<Vec<String>>) -> Result<Self> {
        if pre.is_empty() || post.is_empty() {
            return Err(Error::Config(
                "lexicon needs at least one pre and one post trigger".into(),
            ));
        }
        if pre.iter().chain(&post).chain(&pseudo).any(Vec::is_empty) {
            return Err(Error::Config("empty trigger phrase".into()));
        }
        Ok(TriggerLexicon { pre, post, pseudo })
    }

    /// Parses the lexicon file format:
    ///
    /// ```text
    /// # comment
    /// [pre]
    /// no evidence of
    /// [post]
    /// was ruled out
    /// [pseudo]
    /// not only
    /// ```
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let (mut pre, mut post, mut pseudo) = (Vec::new(), Vec::new(), Vec::new());
        let mut section: Option<&str> = None;
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name.trim() {
                    s @ ("pre" | "post" | "pseudo") => section = Some(s),
                    other => {
                        return Err(Error::Parse {
                            path: origin.into(),
                            line: k + 1,
                            msg: format!("unknown section [{other}]"),
                        })
                    }
                }
                continue;
            }
            let target = match section {
                Some("pre") => &mut pre,
                Some("post") => &mut post,
                Some(_) => &mut pseudo,
                None => {
                    return Err(Error::Parse {
                        path: origin.into(),
                        line: k + 1,
                        msg: "trigger outside any section".into(),
                    })
                }
            };
            target.push(phrase_tokens(line));
        }
        TriggerLexicon::new(pre, post, pseudo)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_file_string(&self) -> String {
        let mut out = String::from("# negation trigger lexicon\n");
        for (name, list) in [("pre", &self.pre), ("post", &self.post), ("pseudo", &self.pseudo)] {
            let _ = writeln!(out, "[{name}]");
            for p in list {
                let _ = writeln!(out, "{}", p.join(" "));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_roundtrip() {
        let lex = TriggerLexicon::default();
        let back = TriggerLexicon::parse(&lex.to_file_string(), "mem").unwrap();
        assert_eq!(back, lex);
    }

    #[test]
    fn rejects_missing_post_section() {
        assert!(TriggerLexicon::parse("[pre]\nno\n", "mem").is_err());
        assert!(TriggerLexicon::parse("no\n", "mem").is_err());
    }
}
