//! Prediction dumps: a header line followed by one JSON record per note.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PredictionSet;
use crate::error::{Error, Result};

const TAG: &str = "mcb-predictions";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    tau: f64,
    notes: usize,
    labels: Vec<String>,
    concepts: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    scores: Vec<f64>,
    decisions: Vec<u8>,
    labels: Vec<u8>,
    concepts: Vec<f64>,
    pseudo: Vec<u8>,
}

pub fn write_predictions(pred: &PredictionSet, mut w: impl Write) -> Result<()> {
    pred.validate()?;
    let io_err = |e| Error::io("<writer>", e);
    let json = |e: serde_json::Error| Error::Input(format!("serialization failed: {e}"));
    let header = Header {
        format: TAG.into(),
        version: VERSION,
        tau: pred.tau,
        notes: pred.len(),
        labels: pred.label_codes.clone(),
        concepts: pred.concept_names.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(json)?;
    w.write_all(b"\n").map_err(io_err)?;
    for i in 0..pred.len() {
        let rec = Record {
            id: pred.ids[i].clone(),
            scores: pred.scores[i].clone(),
            decisions: pred.decisions[i].clone(),
            labels: pred.labels[i].clone(),
            concepts: pred.concepts[i].clone(),
            pseudo: pred.pseudo[i].clone(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(json)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_predictions(r: impl Read, origin: &str) -> Result<PredictionSet> {
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
    let h: Header = serde_json::from_str(&first).map_err(|e| parse(1, e.to_string()))?;
    if h.format != TAG || h.version != VERSION {
        return Err(parse(1, format!("unsupported format {} v{}", h.format, h.version)));
    }
    let mut set = PredictionSet {
        ids: Vec::new(),
        label_codes: h.labels,
        concept_names: h.concepts,
        tau: h.tau,
        scores: Vec::new(),
        decisions: Vec::new(),
        labels: Vec::new(),
        concepts: Vec::new(),
        pseudo: Vec::new(),
    };
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse(k + 2, e.to_string()))?;
        set.ids.push(rec.id);
        set.scores.push(rec.scores);
        set.decisions.push(rec.decisions);
        set.labels.push(rec.labels);
        set.concepts.push(rec.concepts);
        set.pseudo.push(rec.pseudo);
    }
    if set.len() != h.notes {
        return Err(parse(
            set.len() + 2,
            format!(
                "file truncated: header declares {} records, found {}",
                h.notes,
                set.len()
            ),
        ));
    }
    set.validate()?;
    Ok(set)
}

pub fn save_predictions(pred: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(pred, BufWriter::new(f))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions(f, &path.display().to_string())
}
