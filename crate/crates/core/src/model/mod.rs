//! MCB and VCBM forward passes, the joint objective, training and
//! checkpoints.
//!
//! MCB: `H = Enc(x)`, `p_t = H[0]`, `Z_c = MHA(E_c, H, H)`, `p_c = mean(Z_c)`,
//! `g = σ(W2 ReLU(W1 [p_t; p_c] + b1) + b2)`, `z = LN(g ⊙ p_c)`,
//! `ℓ = W_d z + b_d`, and a side head `ĉ = σ(W_c p_t + b_c)`.
//!
//! VCBM: `ĉ = σ(W_c p_t + b_c)`, `ℓ = W_d ĉ + b_d`.

mod checkpoint;
mod config;
mod layout;
mod objective;
mod train;

use log::warn;

use crate::corpus::{ConceptVocabulary, LabelSpace, Note, TokenVocab};
use crate::error::{Error, Result};
use crate::numcore::{mha, Array, ParamStore, Tape, Var};
use layout::{init_params, Layout};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{Ablation, EncoderConfig, LossWeights, ModelConfig, ModelKind, TrainConfig};
pub use objective::{joint_loss, LossComponents};
pub use train::{predict, resolve_pseudo_labels, train_from, train_model, EpochRecord, TrainResult};

/// A model instance: configuration, vocabularies and named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: TokenVocab,
    pub concepts: ConceptVocabulary,
    pub labels: LabelSpace,
    pub params: ParamStore,
    layout: Layout,
}

/// Every intermediate of one forward pass. MCB-only fields are `None`
/// for VCBM.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub kind: ModelKind,
    /// Token representations, n x h.
    pub h: Array,
    pub p_t: Array,
    pub z_c: Option<Array>,
    pub p_c: Option<Array>,
    pub h1: Option<Array>,
    pub h2: Option<Array>,
    pub g: Option<Array>,
    pub u: Option<Array>,
    pub z: Option<Array>,
    pub logits: Array,
    pub c_hat: Array,
}

impl ModelOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.data().iter().map(|&l| crate::numcore::sigmoid(l)).collect()
    }
}

/// Gate-and-bottleneck intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub h1: Array,
    pub h2: Array,
    pub g: Array,
    pub u: Array,
    pub z: Array,
}

/// Handles of one forward pass recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Graph {
    pub h: Var,
    pub p_t: Var,
    pub z_c: Option<Var>,
    pub p_c: Option<Var>,
    pub h1: Option<Var>,
    pub h2: Option<Var>,
    pub g: Option<Var>,
    pub u: Option<Var>,
    pub z: Option<Var>,
    pub logits: Var,
    pub c_hat: Var,
}

impl Model {
    /// Fresh model. `config.encoder.vocab_size` is taken from `vocab`.
    pub fn new(
        mut config: ModelConfig,
        vocab: TokenVocab,
        concepts: ConceptVocabulary,
        labels: LabelSpace,
    ) -> Result<Self> {
        config.encoder.vocab_size = vocab.len();
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("label space is empty".into()));
        }
        let params = init_params(&config, concepts.names(), labels.len())?;
        Self::from_params(config, vocab, concepts, labels, params)
    }

    /// Model around existing parameters; names and shapes are checked.
    pub fn from_params(
        config: ModelConfig,
        vocab: TokenVocab,
        concepts: ConceptVocabulary,
        labels: LabelSpace,
        params: ParamStore,
    ) -> Result<Self> {
        config.validate()?;
        if config.encoder.vocab_size != vocab.len() {
            return Err(Error::Config("vocab_size differs from the token vocabulary".into()));
        }
        let layout = Layout::resolve(&params, &config, concepts.len(), labels.len())?;
        Ok(Model {
            config,
            vocab,
            concepts,
            labels,
            params,
            layout,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn hidden(&self) -> usize {
        self.config.encoder.h
    }

    /// Value of a named parameter.
    pub fn param(&self, name: &str) -> Result<&Array> {
        self.params
            .by_name(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Array> {
        self.params
            .by_name_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    /// Encoder input ids: `[CLS]` followed by `tokens`, truncated to
    /// `max_len`.
    pub fn input_ids(&self, tokens: &[usize]) -> Vec<usize> {
        let max = self.config.encoder.max_len;
        if tokens.len() + 1 > max {
            warn!("input of {} tokens truncated to {}", tokens.len(), max - 1);
        }
        std::iter::once(TokenVocab::CLS)
            .chain(tokens.iter().copied().take(max - 1))
            .collect()
    }

    pub fn note_ids(&self, note: &Note) -> Vec<usize> {
        self.input_ids(&self.vocab.encode(note))
    }

    // Graph builders. `bound` holds one tape handle per parameter id.

    pub(crate) fn encoder_graph(&self, tape: &mut Tape<'_>, bound: &[Var], ids: &[usize]) -> Result<Var> {
        let l = &self.layout;
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab.len()) {
            return Err(Error::Input(format!("token id {bad} outside vocabulary")));
        }
        if ids.is_empty() || ids.len() > self.config.encoder.max_len {
            return Err(Error::Input(format!("sequence length {} out of range", ids.len())));
        }
        let emb = tape.gather(bound[l.tok_emb], ids)?;
        let pos = tape.slice_rows(bound[l.pos_emb], 0, ids.len())?;
        let mut x = tape.add(emb, pos)?;
        let eps = self.config.ln_eps;
        let heads = self.config.encoder.heads;
        for b in &l.blocks {
            let a = mha(tape, x, x, x, heads, &b.attn.vars(bound))?;
            let r = tape.add(x, a)?;
            x = tape.layer_norm_rows(r, bound[b.ln1.0], bound[b.ln1.1], eps)?;
            let f = tape.linear(x, bound[b.ffn1.0], bound[b.ffn1.1])?;
            let f = tape.relu(f);
            let f = tape.linear(f, bound[b.ffn2.0], bound[b.ffn2.1])?;
            let r = tape.add(x, f)?;
            x = tape.layer_norm_rows(r, bound[b.ln2.0], bound[b.ln2.1], eps)?;
        }
        Ok(x)
    }

    fn mcb_ids(&self) -> Result<&layout::McbIds> {
        self.layout
            .mcb
            .as_ref()
            .ok_or_else(|| Error::Config("operation needs an mcb model".into()))
    }

    pub(crate) fn ground_graph(&self, tape: &mut Tape<'_>, bound: &[Var], e_c: Var, h: Var) -> Result<(Var, Var)> {
        let m = self.mcb_ids()?;
        let z_c = mha(tape, e_c, h, h, self.config.encoder.heads, &m.attn.vars(bound))?;
        let p_c = tape.mean_rows(z_c)?;
        Ok((z_c, p_c))
    }

    /// Returns `(h1, h2, g, u, z)`.
    pub(crate) fn gate_graph(&self, tape: &mut Tape<'_>, bound: &[Var], p_t: Var, p_c: Var) -> Result<[Var; 5]> {
        let m = self.mcb_ids()?;
        let cat = tape.concat_cols(&[p_t, p_c])?;
        let h1 = tape.linear(cat, bound[m.gate1.0], bound[m.gate1.1])?;
        let r = tape.relu(h1);
        let h2 = tape.linear(r, bound[m.gate2.0], bound[m.gate2.1])?;
        let g = tape.sigmoid(h2);
        let u = tape.mul(g, p_c)?;
        let z = tape.layer_norm_rows(u, bound[m.ln.0], bound[m.ln.1], self.config.ln_eps)?;
        Ok([h1, h2, g, u, z])
    }

    pub(crate) fn head_graph(&self, tape: &mut Tape<'_>, bound: &[Var], input: Var) -> Result<Var> {
        let (w, b) = self.layout.head;
        tape.linear(input, bound[w], bound[b])
    }

    pub(crate) fn concept_graph(&self, tape: &mut Tape<'_>, bound: &[Var], p_t: Var) -> Result<Var> {
        let (w, b) = self.layout.concept_head;
        let a = tape.linear(p_t, bound[w], bound[b])?;
        Ok(tape.sigmoid(a))
    }

    /// Records the full forward pass for encoder input `ids` (with `[CLS]`).
    pub fn build_graph(&self, tape: &mut Tape<'_>, bound: &[Var], ids: &[usize]) -> Result<Graph> {
        let h = self.encoder_graph(tape, bound, ids)?;
        let p_t = tape.slice_rows(h, 0, 1)?;
        let c_hat = self.concept_graph(tape, bound, p_t)?;
        match self.config.kind {
            ModelKind::Vcbm => {
                let logits = self.head_graph(tape, bound, c_hat)?;
                Ok(Graph {
                    h,
                    p_t,
                    z_c: None,
                    p_c: None,
                    h1: None,
                    h2: None,
                    g: None,
                    u: None,
                    z: None,
                    logits,
                    c_hat,
                })
            }
            ModelKind::Mcb => {
                let (z_c, p_c) = if self.config.ablation == Ablation::NoCrossattn {
                    (None, p_t)
                } else {
                    let e_c = bound[self.mcb_ids()?.queries];
                    let (z, p) = self.ground_graph(tape, bound, e_c, h)?;
                    (Some(z), p)
                };
                let [h1, h2, g, u, z] = self.gate_graph(tape, bound, p_t, p_c)?;
                let logits = self.head_graph(tape, bound, z)?;
                Ok(Graph {
                    h,
                    p_t,
                    z_c,
                    p_c: Some(p_c),
                    h1: Some(h1),
                    h2: Some(h2),
                    g: Some(g),
                    u: Some(u),
                    z: Some(z),
                    logits,
                    c_hat,
                })
            }
        }
    }

    pub(crate) fn read_output(&self, tape: &Tape<'_>, g: &Graph) -> ModelOutput {
        let get = |v: Option<Var>| v.map(|v| tape.value(v).clone());
        ModelOutput {
            kind: self.config.kind,
            h: tape.value(g.h).clone(),
            p_t: tape.value(g.p_t).clone(),
            z_c: get(g.z_c),
            p_c: get(g.p_c),
            h1: get(g.h1),
            h2: get(g.h2),
            g: get(g.g),
            u: get(g.u),
            z: get(g.z),
            logits: tape.value(g.logits).clone(),
            c_hat: tape.value(g.c_hat).clone(),
        }
    }

    /// Full forward pass on encoder input `ids` (including `[CLS]`).
    pub fn forward_ids(&self, ids: &[usize]) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let g = self.build_graph(&mut tape, &bound, ids)?;
        Ok(self.read_output(&tape, &g))
    }

    pub fn forward(&self, note: &Note) -> Result<ModelOutput> {
        self.forward_ids(&self.note_ids(note))
    }

    pub fn mcb_forward(&self, note: &Note) -> Result<ModelOutput> {
        if self.kind() != ModelKind::Mcb {
            return Err(Error::Config("mcb_forward called on a vcbm model".into()));
        }
        self.forward(note)
    }

    pub fn vcbm_forward(&self, note: &Note) -> Result<ModelOutput> {
        if self.kind() != ModelKind::Vcbm {
            return Err(Error::Config("vcbm_forward called on an mcb model".into()));
        }
        self.forward(note)
    }

    /// Records the joint objective on top of `graph`.
    pub fn joint_loss_graph(
        &self,
        tape: &mut Tape<'_>,
        graph: &Graph,
        y: &[u8],
        c_tilde: &[u8],
        weights: &LossWeights,
    ) -> Result<(Var, LossComponents)> {
        objective::joint_loss_graph(tape, graph, self.config.kind, y, c_tilde, weights, self.config.ablation)
    }

    /// `(H, p_t)` for raw token ids (without `[CLS]`).
    pub fn encode(&self, tokens: &[usize]) -> Result<(Array, Array)> {
        let ids = self.input_ids(tokens);
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let h = self.encoder_graph(&mut tape, &bound, &ids)?;
        let p_t = tape.slice_rows(h, 0, 1)?;
        Ok((tape.value(h).clone(), tape.value(p_t).clone()))
    }

    /// `(Z_c, p_c)` for explicit concept queries and token representations.
    pub fn concept_ground(&self, e_c: &Array, h: &Array) -> Result<(Array, Array)> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let (e, hv) = (tape.constant(e_c), tape.constant(h));
        let (z, p) = self.ground_graph(&mut tape, &bound, e, hv)?;
        Ok((tape.value(z).clone(), tape.value(p).clone()))
    }

    pub fn gate_and_bottleneck(&self, p_t: &Array, p_c: &Array) -> Result<GateOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let (a, b) = (tape.constant(p_t), tape.constant(p_c));
        let [h1, h2, g, u, z] = self.gate_graph(&mut tape, &bound, a, b)?;
        let v = |x| tape.value(x).clone();
        Ok(GateOutput {
            h1: v(h1),
            h2: v(h2),
            g: v(g),
            u: v(u),
            z: v(z),
        })
    }

    /// `W_d · input + b_d` (input is `z` for MCB, `ĉ` for VCBM).
    pub fn diagnose(&self, input: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(input);
        let l = self.head_graph(&mut tape, &bound, x)?;
        Ok(tape.value(l).clone())
    }

    pub fn concept_activations(&self, p_t: &Array) -> Result<Array> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(p_t);
        let c = self.concept_graph(&mut tape, &bound, x)?;
        Ok(tape.value(c).clone())
    }
}
