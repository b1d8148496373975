//! Line-delimited JSON corpus files.
//!
//! Line 1 is a header carrying the format tag, version, C, L, the concept
//! vocabulary, label names and the note count. Every further line is one
//! note record:
//!
//! ```text
//! {"format":"mcb-corpus","version":1,"concepts":3,"labels":2,"notes":1,"vocabulary":[...],"label_names":[...]}
//! {"id":"note-000000","text":"...","concepts":[0,2],"labels":[1],"split":"train","mentions":[[0,false]]}
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConceptVocabulary, Dataset, GeneratedMention, LabelSpace, Note, Split};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "mcb-corpus";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    concepts: usize,
    labels: usize,
    notes: usize,
    vocabulary: ConceptVocabulary,
    label_names: LabelSpace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    concepts: Vec<usize>,
    labels: Vec<usize>,
    split: Split,
    #[serde(default)]
    mentions: Vec<(usize, bool)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pseudo: Option<Vec<usize>>,
}

fn indices(v: &[u8]) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, &x)| x != 0).map(|(i, _)| i).collect()
}

fn indicator(idx: &[usize], len: usize, what: &str) -> std::result::Result<Vec<u8>, String> {
    let mut v = vec![0u8; len];
    for &i in idx {
        if i >= len {
            return Err(format!("{what} index {i} out of range (size {len})"));
        }
        v[i] = 1;
    }
    Ok(v)
}

/// Serializes `dataset` to `w`.
pub fn write_dataset(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    dataset.validate()?;
    let header = Header {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        concepts: dataset.vocabulary.len(),
        labels: dataset.label_space.len(),
        notes: dataset.notes.len(),
        vocabulary: dataset.vocabulary.clone(),
        label_names: dataset.label_space.clone(),
    };
    let io_err = |e: std::io::Error| Error::io("<writer>", e);
    let json = |e: serde_json::Error| Error::Input(format!("serialization failed: {e}"));
    serde_json::to_writer(&mut w, &header).map_err(json)?;
    w.write_all(b"\n").map_err(io_err)?;
    for (note, split) in dataset.notes.iter().zip(&dataset.splits) {
        let rec = Record {
            id: note.id.clone(),
            text: note.text.clone(),
            concepts: indices(&note.true_concepts),
            labels: indices(&note.labels),
            split: *split,
            mentions: note.mentions.iter().map(|m| (m.concept, m.negated)).collect(),
            pseudo: note.pseudo_labels.as_deref().map(indices),
        };
        serde_json::to_writer(&mut w, &rec).map_err(json)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Parses a corpus from `r`; `origin` names the source in errors.
pub fn read_dataset(r: impl Read, origin: &str) -> Result<Dataset> {
    let parse = |line: usize, msg: String| Error::Parse {
        path: origin.into(),
        line,
        msg,
    };
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse(1, "missing header".into()))?
        .map_err(|e| Error::io(origin, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| parse(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG || header.version != FORMAT_VERSION {
        return Err(parse(
            1,
            format!("unsupported format {} v{}", header.format, header.version),
        ));
    }
    let (c, l) = (header.vocabulary.len(), header.label_names.len());
    if header.concepts != c || header.labels != l {
        return Err(parse(1, "header counts disagree with name lists".into()));
    }
    let mut notes = Vec::with_capacity(header.notes);
    let mut splits = Vec::with_capacity(header.notes);
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(lineno, e.to_string()))?;
        let concepts = indicator(&rec.concepts, c, "concept").map_err(|m| parse(lineno, m))?;
        let labels = indicator(&rec.labels, l, "label").map_err(|m| parse(lineno, m))?;
        let pseudo = rec
            .pseudo
            .map(|p| indicator(&p, c, "pseudo-label"))
            .transpose()
            .map_err(|m| parse(lineno, m))?;
        if let Some((bad, _)) = rec.mentions.iter().find(|(k, _)| *k >= c) {
            return Err(parse(lineno, format!("mention concept {bad} out of range")));
        }
        let mentions = rec
            .mentions
            .into_iter()
            .map(|(concept, negated)| GeneratedMention { concept, negated })
            .collect();
        let mut note = Note::new(rec.id, rec.text, concepts, labels).with_mentions(mentions);
        note.pseudo_labels = pseudo;
        notes.push(note);
        splits.push(rec.split);
    }
    if notes.len() != header.notes {
        return Err(parse(
            notes.len() + 2,
            format!(
                "file truncated: header declares {} notes, found {}",
                header.notes,
                notes.len()
            ),
        ));
    }
    let ds = Dataset {
        vocabulary: header.vocabulary,
        label_space: header.label_names,
        notes,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, BufWriter::new(f))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(f, &path.display().to_string())
}

/// Saves to `path` and reads the file back.
pub fn persist_roundtrip(dataset: &Dataset, path: impl AsRef<Path>) -> Result<Dataset> {
    save_dataset(dataset, &path)?;
    load_dataset(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset {
            vocabulary: ConceptVocabulary::new(vec!["fever".into(), "cough".into()]).unwrap(),
            label_space: LabelSpace::new(vec!["A".into(), "B".into()]).unwrap(),
            notes: vec![Note::new("n0", "denies fever. cough noted.", vec![0, 1], vec![1, 0])],
            splits: vec![Split::Val],
        }
    }

    #[test]
    fn roundtrip_in_memory() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        assert_eq!(read_dataset(&buf[..], "mem").unwrap(), ds);
    }

    #[test]
    fn bad_record_names_its_line() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text = text.replace("\"labels\":[0]", "\"labels\":[7]");
        match read_dataset(text.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
