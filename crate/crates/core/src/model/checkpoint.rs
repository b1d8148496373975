//! Binary checkpoints.
//!
//! Layout (little-endian): magic `MCBCKPT\0`, `u32` version, `u64` length
//! and bytes of a JSON document with the model config and vocabularies,
//! `u32` parameter count, then per parameter: `u32` name length, name,
//! `u32` rank, `u64` dims, `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::Model;
use crate::corpus::{ConceptVocabulary, LabelSpace, TokenVocab};
use crate::error::{Error, Result};
use crate::numcore::{Array, ParamStore};

const MAGIC: &[u8; 8] = b"MCBCKPT\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    vocab: TokenVocab,
    concepts: ConceptVocabulary,
    labels: LabelSpace,
}

pub fn write_checkpoint(model: &Model, mut w: impl Write) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    let meta = serde_json::to_vec(&Meta {
        model: model.config.clone(),
        vocab: model.vocab.clone(),
        concepts: model.concepts.clone(),
        labels: model.labels.clone(),
    })
    .map_err(|e| Error::Input(format!("checkpoint metadata: {e}")))?;
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(meta.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&meta).map_err(io)?;
    w.write_all(&(model.params.len() as u32).to_le_bytes()).map_err(io)?;
    for p in model.params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(p.name.as_bytes()).map_err(io)?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Reader<R> {
    inner: R,
    origin: String,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.origin, e))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(r: impl Read, origin: &str) -> Result<Model> {
    let mut rd = Reader {
        inner: r,
        origin: origin.to_string(),
    };
    let bad = |msg: String| Error::Input(format!("{origin}: {msg}"));
    if rd.bytes(8)? != MAGIC {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = rd.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = rd.u64()? as usize;
    let meta: Meta = serde_json::from_slice(&rd.bytes(meta_len)?).map_err(|e| bad(format!("metadata: {e}")))?;
    let count = rd.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = rd.u32()? as usize;
        let name = String::from_utf8(rd.bytes(name_len)?).map_err(|e| bad(e.to_string()))?;
        let rank = rd.u32()? as usize;
        let shape = (0..rank)
            .map(|_| rd.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = rd.bytes(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(name, Array::from_vec(&shape, data)?)?;
    }
    Model::from_params(meta.model, meta.vocab, meta.concepts, meta.labels, store)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(f))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f), &path.display().to_string())
}
