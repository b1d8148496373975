//! Synthetic clinical-style notes with a known concept→label structure.
//!
//! Each note asserts a random subset of concepts. Asserted concepts get at
//! least one plain mention; some absent concepts get mentions behind a
//! pre-negation trigger from the default lexicon, and some asserted ones are
//! phrased with a pseudo-negation trigger. Labels are a fixed function of
//! the asserted concepts (see [`LabelMap`]), optionally flipped by noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::split::split_dataset;
use super::{ConceptVocabulary, Dataset, GeneratedMention, LabelSpace, Note, Split};
use crate::error::{Error, Result};

/// Single-word concept names used before falling back to `findingN`.
pub const DEFAULT_CONCEPT_NAMES: &[&str] = &[
    "fever",
    "dyspnea",
    "hypotension",
    "hyponatremia",
    "acidosis",
    "cardiac",
    "pulmonary",
    "renal",
    "insulin",
    "anticoagulation",
    "cpap",
    "diabetes",
    "copd",
    "fibrillation",
    "palliative",
    "hypertension",
    "aspirin",
    "coronary",
    "cabg",
    "metformin",
    "cholesterol",
    "sepsis",
    "pneumonia",
    "anemia",
    "edema",
    "cough",
    "tachycardia",
    "bradycardia",
    "hypoxia",
    "syncope",
    "nausea",
    "vomiting",
    "diarrhea",
    "confusion",
    "delirium",
    "seizure",
    "stroke",
    "hematuria",
    "jaundice",
    "ascites",
    "cirrhosis",
    "hepatitis",
    "pancreatitis",
    "dialysis",
    "transfusion",
    "intubation",
    "heparin",
    "warfarin",
    "statin",
    "furosemide",
    "lisinopril",
    "hyperkalemia",
    "hypokalemia",
    "leukocytosis",
    "thrombocytopenia",
    "obesity",
    "depression",
    "anxiety",
    "dementia",
    "asthma",
    "embolism",
    "thrombosis",
    "ulcer",
    "hemorrhage",
    "fracture",
    "osteoporosis",
    "hypothyroidism",
    "gout",
    "arthritis",
    "neuropathy",
    "retinopathy",
    "angina",
    "infarction",
    "cardiomyopathy",
    "effusion",
    "wheezing",
    "rash",
    "cellulitis",
    "abscess",
    "bacteremia",
    "hyperglycemia",
    "hypoglycemia",
    "smoking",
    "alcohol",
    "opioid",
];

const POSITIVE: &[&str] = &[
    "patient reports {c}.",
    "{c} noted on exam.",
    "history of {c}.",
    "{c} present on admission.",
    "findings consistent with {c}.",
    "ongoing {c} managed on the ward.",
];

const PSEUDO: &[&str] = &[
    "no increase in {c} today.",
    "not only {c} on review.",
    "{c} treated without difficulty.",
];

const PRE_NEGATED: &[&str] = &[
    "no {c}.",
    "patient denies {c}.",
    "without {c}.",
    "negative for {c}.",
    "no evidence of {c}.",
    "free of {c}.",
    "imaging rules out {c}.",
    "absent {c}.",
    "not consistent with {c}.",
];

const RETURNED: &str = "{c} returned overnight.";

const CONTRAST: &str = "no {n} but {c} present.";

const FILLER: &[&str] = &[
    "patient seen on the ward.",
    "vitals stable overnight.",
    "plan discussed with family.",
    "follow up in clinic.",
    "medications reviewed.",
    "discharged home in stable condition.",
    "labs drawn this morning.",
    "nursing notes reviewed.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    /// Every label is a thresholded weighted sum of 2–5 concepts.
    Linear,
    /// Like `Linear`, except `xor_labels` labels are the exclusive-or of
    /// two designated concepts.
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Number of concepts (C).
    pub concepts: usize,
    /// Number of labels (L).
    pub labels: usize,
    pub notes_n: usize,
    pub mapping_mode: MappingMode,
    /// Probability that an absent concept receives a negated mention.
    pub negation_rate: f64,
    /// Probability that an asserted concept is phrased with a pseudo-trigger.
    pub pseudo_negation_rate: f64,
    pub label_noise: f64,
    pub seed: u64,
    /// Concept prevalences are drawn uniformly from this range.
    pub prevalence: [f64; 2],
    /// Target marginal of label 0 for linear labels.
    pub label_base_rate: f64,
    /// Geometric decay of linear-label target marginals.
    pub label_decay: f64,
    /// Exclusive-or labels in interaction mode (at least one).
    pub xor_labels: usize,
    pub split: [f64; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            concepts: 12,
            labels: 6,
            notes_n: 2000,
            mapping_mode: MappingMode::Linear,
            negation_rate: 0.05,
            pseudo_negation_rate: 0.05,
            label_noise: 0.0,
            seed: 42,
            prevalence: [0.2, 0.4],
            label_base_rate: 0.45,
            label_decay: 0.8,
            xor_labels: 2,
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.concepts < 2 || self.labels < 2 {
            return Err(Error::Config(format!(
                "need at least 2 concepts and 2 labels, got {} and {}",
                self.concepts, self.labels
            )));
        }
        for (name, p) in [
            ("negation_rate", self.negation_rate),
            ("pseudo_negation_rate", self.pseudo_negation_rate),
            ("label_noise", self.label_noise),
            ("prevalence[0]", self.prevalence[0]),
            ("prevalence[1]", self.prevalence[1]),
            ("label_base_rate", self.label_base_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.prevalence[0] > self.prevalence[1] {
            return Err(Error::Config("prevalence range is reversed".into()));
        }
        if !(self.label_decay > 0.0 && self.label_decay <= 1.0) {
            return Err(Error::Config("label_decay must lie in (0, 1]".into()));
        }
        if self.mapping_mode == MappingMode::Interaction && self.xor_labels == 0 {
            return Err(Error::Config("interaction mode needs at least one xor label".into()));
        }
        Ok(())
    }
}

/// How one label is computed from the asserted concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LabelRule {
    /// `Σ weights[i] · c[concepts[i]] ≥ threshold`.
    Linear {
        concepts: Vec<usize>,
        weights: Vec<f64>,
        threshold: f64,
    },
    /// `c[a] XOR c[b]`.
    Xor { a: usize, b: usize },
}

impl LabelRule {
    pub fn eval(&self, c: &[u8]) -> u8 {
        match self {
            LabelRule::Linear {
                concepts,
                weights,
                threshold,
            } => {
                let s: f64 = concepts.iter().zip(weights).map(|(&k, w)| w * c[k] as f64).sum();
                u8::from(s >= *threshold)
            }
            LabelRule::Xor { a, b } => c[*a] ^ c[*b],
        }
    }

    pub fn concepts(&self) -> Vec<usize> {
        match self {
            LabelRule::Linear { concepts, .. } => concepts.clone(),
            LabelRule::Xor { a, b } => vec![*a, *b],
        }
    }
}

/// The generator's fixed concept→label structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    pub prevalence: Vec<f64>,
    pub rules: Vec<LabelRule>,
}

impl LabelMap {
    /// Noise-free labels for an asserted-concept vector.
    pub fn labels(&self, concepts: &[u8]) -> Vec<u8> {
        self.rules.iter().map(|r| r.eval(concepts)).collect()
    }

    /// Labels whose rule reads concept `c`.
    pub fn dependents(&self, c: usize) -> Vec<usize> {
        self.rules
            .iter()
            .enumerate()
            .filter(|(_, r)| r.concepts().contains(&c))
            .map(|(j, _)| j)
            .collect()
    }

    pub fn xor_labels(&self) -> Vec<usize> {
        self.rules
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, LabelRule::Xor { .. }))
            .map(|(j, _)| j)
            .collect()
    }

    /// Builds the structure from the config seed.
    pub fn from_config(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let prevalence: Vec<f64> = (0..cfg.concepts)
            .map(|_| rng.gen_range(cfg.prevalence[0]..=cfg.prevalence[1]))
            .collect();
        let xor_set: Vec<usize> = match cfg.mapping_mode {
            MappingMode::Linear => Vec::new(),
            MappingMode::Interaction => (0..cfg.labels).filter(|j| j % 2 == 1).take(cfg.xor_labels).collect(),
        };
        let all: Vec<usize> = (0..cfg.concepts).collect();
        let mut rules = Vec::with_capacity(cfg.labels);
        let mut linear_rank = 0;
        for j in 0..cfg.labels {
            if xor_set.contains(&j) {
                let pick: Vec<usize> = all.choose_multiple(&mut rng, 2).copied().collect();
                rules.push(LabelRule::Xor { a: pick[0], b: pick[1] });
                continue;
            }
            let k = rng.gen_range(2..=5usize).min(cfg.concepts);
            let mut concepts: Vec<usize> = all.choose_multiple(&mut rng, k).copied().collect();
            concepts.sort_unstable();
            let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
            let target = cfg.label_base_rate * cfg.label_decay.powi(linear_rank);
            linear_rank += 1;
            let threshold = best_threshold(&concepts, &weights, &prevalence, target);
            rules.push(LabelRule::Linear {
                concepts,
                weights,
                threshold,
            });
        }
        Ok(LabelMap { prevalence, rules })
    }
}

/// Threshold among the achievable positive weighted sums whose positive
/// rate under independent concepts is closest to `target`.
fn best_threshold(concepts: &[usize], weights: &[f64], prevalence: &[f64], target: f64) -> f64 {
    let k = concepts.len();
    let mut outcomes: Vec<(f64, f64)> = (0u32..1 << k)
        .map(|mask| {
            let mut s = 0.0;
            let mut p = 1.0;
            for (i, (&c, w)) in concepts.iter().zip(weights).enumerate() {
                if mask >> i & 1 == 1 {
                    s += w;
                    p *= prevalence[c];
                } else {
                    p *= 1.0 - prevalence[c];
                }
            }
            (s, p)
        })
        .collect();
    outcomes.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut best = (f64::INFINITY, outcomes.last().unwrap().0);
    for &(s, _) in outcomes.iter().filter(|o| o.0 > 0.0) {
        let rate: f64 = outcomes.iter().filter(|o| o.0 >= s).map(|o| o.1).sum();
        let err = (rate - target).abs();
        if err < best.0 {
            best = (err, s);
        }
    }
    best.1
}

fn fill(template: &str, concept: &str) -> String {
    template.replace("{c}", concept)
}

struct Sentence {
    text: String,
    mentions: Vec<GeneratedMention>,
}

impl Sentence {
    fn one(text: String, concept: usize, negated: bool) -> Self {
        Sentence {
            text,
            mentions: vec![GeneratedMention { concept, negated }],
        }
    }
}

fn write_note(
    cfg: &GeneratorConfig,
    names: &[String],
    asserted: &[u8],
    rng: &mut ChaCha8Rng,
) -> (String, Vec<GeneratedMention>) {
    let mut sentences = Vec::new();
    let mut negated = Vec::new();
    for (k, &present) in asserted.iter().enumerate() {
        if present == 0 && rng.gen_bool(cfg.negation_rate) {
            negated.push(k);
        }
    }
    let mut contrast_pool = negated.clone();
    contrast_pool.shuffle(rng);
    for (k, &present) in asserted.iter().enumerate() {
        if present == 1 {
            let name = &names[k];
            if rng.gen_bool(cfg.pseudo_negation_rate) {
                let t = PSEUDO.choose(rng).unwrap();
                sentences.push(Sentence::one(fill(t, name), k, false));
            } else if !contrast_pool.is_empty() && rng.gen_bool(0.3) {
                let n = contrast_pool.pop().unwrap();
                negated.retain(|&x| x != n);
                let text = CONTRAST.replace("{n}", &names[n]).replace("{c}", name);
                sentences.push(Sentence {
                    text,
                    mentions: vec![
                        GeneratedMention {
                            concept: n,
                            negated: true,
                        },
                        GeneratedMention {
                            concept: k,
                            negated: false,
                        },
                    ],
                });
            } else if rng.gen_bool(cfg.negation_rate * 0.25) {
                // An earlier negated mention followed by a later positive one.
                let t = PRE_NEGATED.choose(rng).unwrap();
                let text = format!("{} {}", fill(t, name), fill(RETURNED, name));
                sentences.push(Sentence {
                    text,
                    mentions: vec![
                        GeneratedMention {
                            concept: k,
                            negated: true,
                        },
                        GeneratedMention {
                            concept: k,
                            negated: false,
                        },
                    ],
                });
            } else {
                let t = POSITIVE.choose(rng).unwrap();
                sentences.push(Sentence::one(fill(t, name), k, false));
            }
        }
    }
    for k in negated {
        let t = PRE_NEGATED.choose(rng).unwrap();
        sentences.push(Sentence::one(fill(t, &names[k]), k, true));
    }
    for _ in 0..rng.gen_range(1..=2) {
        sentences.push(Sentence {
            text: FILLER.choose(rng).unwrap().to_string(),
            mentions: Vec::new(),
        });
    }
    sentences.shuffle(rng);
    let text = sentences.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
    let mentions = sentences.into_iter().flat_map(|s| s.mentions).collect();
    (text, mentions)
}

pub(crate) fn concept_names(c: usize) -> Vec<String> {
    (0..c)
        .map(|k| match DEFAULT_CONCEPT_NAMES.get(k) {
            Some(n) => n.to_string(),
            None => format!("finding{k}"),
        })
        .collect()
}

/// Deterministic synthetic corpus for `cfg`, split by `cfg.split`.
pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<Dataset> {
    let map = LabelMap::from_config(cfg)?;
    let names = concept_names(cfg.concepts);
    let vocabulary = ConceptVocabulary::new(names.clone())?;
    let label_space = LabelSpace::new((0..cfg.labels).map(|j| format!("DX{:02}", j + 1)).collect())?;
    let mut notes = Vec::with_capacity(cfg.notes_n);
    for i in 0..cfg.notes_n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let asserted: Vec<u8> = map.prevalence.iter().map(|&p| u8::from(rng.gen_bool(p))).collect();
        let mut labels = map.labels(&asserted);
        for y in &mut labels {
            if cfg.label_noise > 0.0 && rng.gen_bool(cfg.label_noise) {
                *y ^= 1;
            }
        }
        let (text, mentions) = write_note(cfg, &names, &asserted, &mut rng);
        notes.push(Note::new(format!("note-{i:06}"), text, asserted, labels).with_mentions(mentions));
    }
    let dataset = Dataset {
        vocabulary,
        label_space,
        splits: vec![Split::Train; notes.len()],
        notes,
    };
    split_dataset(dataset, cfg.split, cfg.seed)
}
