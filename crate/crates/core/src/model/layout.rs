//! Parameter naming, shapes and initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, ModelKind};
use crate::error::{Error, Result};
use crate::numcore::{Array, MhaVars, ParamStore, Var};

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform(usize),
    Zeros,
    Ones,
    /// Sinusoidal position table, scaled by `1/sqrt(h)`.
    Sinusoid,
    /// Concept queries seeded from a hash of each concept name.
    ConceptHash,
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn attn_entries(prefix: &str, h: usize, out: &mut Vec<Entry>) {
    for p in ["q", "k", "v", "o"] {
        out.push(Entry {
            name: format!("{prefix}.w_{p}"),
            shape: vec![h, h],
            init: Init::Uniform(h),
        });
        out.push(Entry {
            name: format!("{prefix}.b_{p}"),
            shape: vec![h],
            init: Init::Zeros,
        });
    }
}

fn ln_entries(prefix: &str, h: usize, out: &mut Vec<Entry>) {
    out.push(Entry {
        name: format!("{prefix}.gamma"),
        shape: vec![h],
        init: Init::Ones,
    });
    out.push(Entry {
        name: format!("{prefix}.beta"),
        shape: vec![h],
        init: Init::Zeros,
    });
}

fn dense(out: &mut Vec<Entry>, w: &str, b: &str, rows: usize, cols: usize) {
    out.push(Entry {
        name: w.into(),
        shape: vec![rows, cols],
        init: Init::Uniform(cols),
    });
    out.push(Entry {
        name: b.into(),
        shape: vec![rows],
        init: Init::Zeros,
    });
}

fn entries(cfg: &ModelConfig, c: usize, l: usize) -> Vec<Entry> {
    let e = &cfg.encoder;
    let h = e.h;
    let mut out = vec![
        Entry {
            name: "enc.tok_emb".into(),
            shape: vec![e.vocab_size, h],
            init: Init::Uniform(h),
        },
        Entry {
            name: "enc.pos_emb".into(),
            shape: vec![e.max_len, h],
            init: Init::Sinusoid,
        },
    ];
    for layer in 0..e.layers {
        let p = format!("enc.{layer}");
        attn_entries(&format!("{p}.attn"), h, &mut out);
        ln_entries(&format!("{p}.ln1"), h, &mut out);
        let f = e.ffn_width();
        dense(&mut out, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"), f, h);
        dense(&mut out, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"), h, f);
        ln_entries(&format!("{p}.ln2"), h, &mut out);
    }
    match cfg.kind {
        ModelKind::Mcb => {
            out.push(Entry {
                name: "concept.queries".into(),
                shape: vec![c, h],
                init: Init::ConceptHash,
            });
            attn_entries("concept.attn", h, &mut out);
            let dg = cfg.gate_width();
            dense(&mut out, "gate.w1", "gate.b1", dg, 2 * h);
            dense(&mut out, "gate.w2", "gate.b2", h, dg);
            ln_entries("bottleneck.ln", h, &mut out);
            dense(&mut out, "head.w_d", "head.b_d", l, h);
            dense(&mut out, "concept_head.w_c", "concept_head.b_c", c, h);
        }
        ModelKind::Vcbm => {
            dense(&mut out, "concept_head.w_c", "concept_head.b_c", c, h);
            dense(&mut out, "head.w_d", "head.b_d", l, c);
        }
    }
    out
}

fn sinusoid(rows: usize, h: usize) -> Vec<f64> {
    let scale = 1.0 / (h as f64).sqrt();
    let mut out = Vec::with_capacity(rows * h);
    for pos in 0..rows {
        for i in 0..h {
            let rate = 10000f64.powf(-((i / 2 * 2) as f64) / h as f64);
            let a = pos as f64 * rate;
            out.push(scale * if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    out
}

fn concept_hash_row(name: &str, h: usize) -> Vec<f64> {
    let digest = Sha256::digest(name.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let bound = 1.0 / (h as f64).sqrt();
    (0..h).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Fresh parameters for `cfg` with `concepts.len()` concept queries and
/// `labels` outputs.
pub(crate) fn init_params(cfg: &ModelConfig, concepts: &[String], labels: usize) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    for e in entries(cfg, concepts.len(), labels) {
        let n: usize = e.shape.iter().product();
        let data = match e.init {
            Init::Uniform(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-b..b)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Sinusoid => sinusoid(e.shape[0], e.shape[1]),
            Init::Ones => vec![1.0; n],
            Init::ConceptHash => concepts
                .iter()
                .flat_map(|c| concept_hash_row(c, cfg.encoder.h))
                .collect(),
        };
        store.insert(e.name, Array::from_vec(&e.shape, data)?)?;
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIds {
    ids: [usize; 8],
}

impl AttnIds {
    fn resolve(store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut ids = [0; 8];
        for (slot, name) in ids
            .iter_mut()
            .zip(["w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o"])
        {
            *slot = store.id(&format!("{prefix}.{name}"))?;
        }
        Ok(AttnIds { ids })
    }

    pub(crate) fn vars(&self, bound: &[Var]) -> MhaVars {
        let v = |i: usize| bound[self.ids[i]];
        MhaVars {
            w_q: v(0),
            b_q: v(1),
            w_k: v(2),
            b_k: v(3),
            w_v: v(4),
            b_v: v(5),
            w_o: v(6),
            b_o: v(7),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub attn: AttnIds,
    pub ln1: (usize, usize),
    pub ffn1: (usize, usize),
    pub ffn2: (usize, usize),
    pub ln2: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct McbIds {
    pub queries: usize,
    pub attn: AttnIds,
    pub gate1: (usize, usize),
    pub gate2: (usize, usize),
    pub ln: (usize, usize),
}

/// Parameter ids of every model component.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockIds>,
    pub mcb: Option<McbIds>,
    pub concept_head: (usize, usize),
    pub head: (usize, usize),
}

impl Layout {
    /// Looks up every expected parameter and checks its shape.
    pub(crate) fn resolve(store: &ParamStore, cfg: &ModelConfig, c: usize, l: usize) -> Result<Self> {
        let expected = entries(cfg, c, l);
        if expected.len() != store.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                expected.len(),
                store.len()
            )));
        }
        for e in &expected {
            let p = store
                .by_name(&e.name)
                .ok_or_else(|| Error::Config(format!("missing parameter {}", e.name)))?;
            if p.value.shape() != e.shape.as_slice() {
                return Err(Error::shape(
                    "parameter",
                    format!("{} is {:?}, expected {:?}", e.name, p.value.shape(), e.shape),
                ));
            }
        }
        let pair = |a: &str, b: &str| -> Result<(usize, usize)> { Ok((store.id(a)?, store.id(b)?)) };
        let blocks = (0..cfg.encoder.layers)
            .map(|i| {
                let p = format!("enc.{i}");
                Ok(BlockIds {
                    attn: AttnIds::resolve(store, &format!("{p}.attn"))?,
                    ln1: pair(&format!("{p}.ln1.gamma"), &format!("{p}.ln1.beta"))?,
                    ffn1: pair(&format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))?,
                    ffn2: pair(&format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"))?,
                    ln2: pair(&format!("{p}.ln2.gamma"), &format!("{p}.ln2.beta"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mcb = match cfg.kind {
            ModelKind::Mcb => Some(McbIds {
                queries: store.id("concept.queries")?,
                attn: AttnIds::resolve(store, "concept.attn")?,
                gate1: pair("gate.w1", "gate.b1")?,
                gate2: pair("gate.w2", "gate.b2")?,
                ln: pair("bottleneck.ln.gamma", "bottleneck.ln.beta")?,
            }),
            ModelKind::Vcbm => None,
        };
        Ok(Layout {
            tok_emb: store.id("enc.tok_emb")?,
            pos_emb: store.id("enc.pos_emb")?,
            blocks,
            mcb,
            concept_head: pair("concept_head.w_c", "concept_head.b_c")?,
            head: pair("head.w_d", "head.b_d")?,
        })
    }
}
