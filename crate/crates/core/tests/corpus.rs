//! Generator, split and corpus-file properties.

use mcb_core::corpus::{
    generate_corpus, persist_roundtrip, read_dataset, split_counts, split_dataset, write_dataset, GeneratorConfig,
    LabelMap, LabelRule, MappingMode, Note, Split,
};
use mcb_core::negex::{classify_mentions, find_mentions, find_scopes, pseudo_label, TriggerLexicon};
use proptest::prelude::*;

fn small(seed: u64, mode: MappingMode) -> GeneratorConfig {
    GeneratorConfig {
        notes_n: 120,
        mapping_mode: mode,
        seed,
        ..GeneratorConfig::default()
    }
}

fn serialised(cfg: &GeneratorConfig) -> Vec<u8> {
    let mut buf = Vec::new();
    write_dataset(&generate_corpus(cfg).unwrap(), &mut buf).unwrap();
    buf
}

#[test]
fn identical_config_gives_identical_bytes() {
    let cfg = small(5, MappingMode::Interaction);
    assert_eq!(serialised(&cfg), serialised(&cfg));
    assert_ne!(serialised(&cfg), serialised(&small(6, MappingMode::Interaction)));
}

#[test]
fn file_roundtrip_preserves_everything() {
    let mut ds = generate_corpus(&small(1, MappingMode::Linear)).unwrap();
    let lex = TriggerLexicon::default();
    for n in ds.notes.iter_mut().step_by(3) {
        n.pseudo_labels = Some(pseudo_label(n, &ds.vocabulary, &lex));
    }
    let dir = tempfile::tempdir().unwrap();
    let back = persist_roundtrip(&ds, dir.path().join("c.jsonl")).unwrap();
    assert_eq!(back, ds);
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf).unwrap();
    assert_eq!(read_dataset(&buf[..], "mem").unwrap(), ds);
}

#[test]
fn truncated_file_is_rejected() {
    let mut buf = Vec::new();
    write_dataset(&generate_corpus(&small(2, MappingMode::Linear)).unwrap(), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    assert!(read_dataset(cut.as_bytes(), "cut").is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        GeneratorConfig {
            concepts: 1,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            labels: 1,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            negation_rate: 1.5,
            ..GeneratorConfig::default()
        },
        GeneratorConfig {
            label_noise: -0.1,
            ..GeneratorConfig::default()
        },
    ] {
        assert!(generate_corpus(&cfg).is_err(), "{cfg:?}");
    }
}

#[test]
fn interaction_mode_has_an_xor_label_over_ground_truth() {
    let cfg = small(3, MappingMode::Interaction);
    let map = LabelMap::from_config(&cfg).unwrap();
    let xor = map.xor_labels();
    assert!(!xor.is_empty());
    let ds = generate_corpus(&cfg).unwrap();
    for j in xor {
        let LabelRule::Xor { a, b } = map.rules[j] else {
            unreachable!()
        };
        for n in &ds.notes {
            assert_eq!(n.labels[j], n.true_concepts[a] ^ n.true_concepts[b]);
        }
    }
}

#[test]
fn labels_follow_the_label_map() {
    let cfg = small(4, MappingMode::Linear);
    let map = LabelMap::from_config(&cfg).unwrap();
    for n in &generate_corpus(&cfg).unwrap().notes {
        assert_eq!(n.labels, map.labels(&n.true_concepts));
    }
}

/// Replaces every mention of concept `c` with a neutral filler word.
fn mask_concept(note: &Note, c: usize, ds: &mcb_core::corpus::Dataset) -> Note {
    let chars: Vec<char> = note.text.chars().collect();
    let mut spans: Vec<(usize, usize)> = find_mentions(note, &ds.vocabulary)
        .into_iter()
        .filter(|m| m.concept == c)
        .map(|m| (note.tokens[m.span.start].start, note.tokens[m.span.end - 1].end))
        .collect();
    spans.sort();
    let mut out = String::new();
    let mut at = 0;
    for (s, e) in spans {
        out.extend(&chars[at..s]);
        out.push_str("zzz");
        at = e;
    }
    out.extend(&chars[at..]);
    Note::new(note.id.clone(), out, vec![], vec![])
}

#[test]
fn masking_a_concept_flips_exactly_its_dependent_labels() {
    let cfg = small(8, MappingMode::Interaction);
    let map = LabelMap::from_config(&cfg).unwrap();
    let ds = generate_corpus(&cfg).unwrap();
    let lex = TriggerLexicon::default();
    let mut flips = 0;
    for n in ds.notes.iter().take(60) {
        for c in (0..ds.vocabulary.len()).filter(|&c| n.true_concepts[c] == 1) {
            let masked = mask_concept(n, c, &ds);
            let recovered = pseudo_label(&masked, &ds.vocabulary, &lex);
            let mut expected = n.true_concepts.clone();
            expected[c] = 0;
            assert_eq!(recovered, expected, "note {}", n.id);
            let after = map.labels(&recovered);
            let deps = map.dependents(c);
            for (j, (&a, &y)) in after.iter().zip(&n.labels).enumerate() {
                if a != y {
                    assert!(deps.contains(&j), "label {j} flipped without depending on {c}");
                    flips += 1;
                }
                if matches!(map.rules[j], LabelRule::Xor { .. }) && deps.contains(&j) {
                    assert_ne!(a, y, "XOR label {j} did not flip");
                }
            }
        }
    }
    assert!(flips > 0);
}

#[test]
fn positives_are_asserted_and_negated_mentions_are_scoped() {
    let ds = generate_corpus(&small(9, MappingMode::Linear)).unwrap();
    let lex = TriggerLexicon::default();
    for n in &ds.notes {
        let found = classify_mentions(n, &ds.vocabulary, &lex);
        assert_eq!(found.len(), n.mentions.len(), "note {}", n.id);
        for (f, g) in found.iter().zip(&n.mentions) {
            assert_eq!(f.concept, g.concept);
            assert_eq!(f.negated, g.negated, "note {}: {}", n.id, n.text);
        }
        for c in 0..ds.vocabulary.len() {
            let asserted = n.mentions.iter().any(|m| m.concept == c && !m.negated);
            assert_eq!(asserted, n.true_concepts[c] == 1, "note {} concept {c}", n.id);
        }
        if n.mentions.iter().any(|m| m.negated) {
            assert!(!find_scopes(n, &lex).is_empty());
        }
    }
}

#[test]
fn note_invariants_hold() {
    let ds = generate_corpus(&small(10, MappingMode::Interaction)).unwrap();
    ds.validate().unwrap();
    for n in &ds.notes {
        for w in n.tokens.windows(2) {
            assert!(w[0].start < w[0].end && w[0].end <= w[1].start);
        }
        assert!(n.sentence_breaks.iter().all(|&b| b < n.tokens.len()));
        assert_eq!(n.true_concepts.len(), ds.vocabulary.len());
        assert_eq!(n.labels.len(), ds.label_space.len());
    }
}

#[test]
fn split_sizes_match_ratios() {
    let ds = generate_corpus(&GeneratorConfig::default()).unwrap();
    assert_eq!(ds.split_indices(Split::Train).len(), 1400);
    assert_eq!(ds.split_indices(Split::Val).len(), 300);
    assert_eq!(ds.split_indices(Split::Test).len(), 300);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn splits_are_disjoint_exhaustive_and_seeded(seed in 0u64..10_000, n in 3usize..200) {
        let cfg = GeneratorConfig { notes_n: n, seed, ..GeneratorConfig::default() };
        let ds = generate_corpus(&cfg).unwrap();
        let ratios = [0.7, 0.15, 0.15];
        let a = split_dataset(ds.clone(), ratios, seed).unwrap();
        let b = split_dataset(ds, ratios, seed).unwrap();
        prop_assert_eq!(&a.splits, &b.splits);
        let counts = split_counts(n, ratios).unwrap();
        let got = [Split::Train, Split::Val, Split::Test].map(|s| a.split_indices(s).len());
        prop_assert_eq!(got, counts);
        prop_assert_eq!(counts.iter().sum::<usize>(), n);
        for (k, r) in counts.iter().zip(ratios) {
            prop_assert!((*k as f64 - r * n as f64).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..10_000) {
        let cfg = GeneratorConfig { notes_n: 20, seed, mapping_mode: MappingMode::Interaction, ..GeneratorConfig::default() };
        prop_assert_eq!(generate_corpus(&cfg).unwrap(), generate_corpus(&cfg).unwrap());
    }
}
