//! Faithfulness measures against closed-form, reverse-mode, finite-difference
//! and enumeration oracles.

use mcb_core::corpus::{ConceptVocabulary, LabelSpace, Note, TokenVocab};
use mcb_core::evalstat::PredictionSet;
use mcb_core::interpret::*;
use mcb_core::model::{Ablation, EncoderConfig, Model, ModelConfig, ModelKind, ModelOutput};
use mcb_core::numcore::check::{central_difference, max_relative_error, FD_STEP};
use mcb_core::numcore::Array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(kind: ModelKind, seed: u64) -> Model {
    let vocab = TokenVocab::from(
        [
            "[CLS]", "[UNK]", "[MASK]", "fever", "cough", "rash", "pain", "no", "patient", ".",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>(),
    );
    let concepts = ConceptVocabulary::new(
        ["fever", "cough", "rash", "pain"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .unwrap();
    let labels = LabelSpace::new(["x", "y", "z"].iter().map(|s| s.to_string()).collect()).unwrap();
    let cfg = ModelConfig {
        kind,
        ablation: Ablation::Full,
        encoder: EncoderConfig {
            vocab_size: 0,
            h: 8,
            layers: 1,
            heads: 2,
            max_len: 16,
            ffn: 0,
        },
        gate_hidden: 0,
        ln_eps: 1e-5,
        seed,
    };
    let mut m = Model::new(cfg, vocab, concepts, labels).unwrap();
    // Non-zero biases so every term of the Jacobians is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for p in m.params.iter_mut() {
        if p.name.contains(".b") || p.name.ends_with("beta") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    m
}

fn random_ids(seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..10);
    std::iter::once(0).chain((0..n).map(|_| rng.gen_range(3..10))).collect()
}

fn logit_fd_head(model: &Model, out: &ModelOutput, j: usize) -> Array {
    match model.kind() {
        ModelKind::Vcbm => central_difference(|c| model.diagnose(c).unwrap().data()[j], &out.c_hat, FD_STEP),
        ModelKind::Mcb => central_difference(
            |p_c| {
                let g = model.gate_and_bottleneck(&out.p_t, p_c).unwrap();
                model.diagnose(&g.z).unwrap().data()[j]
            },
            out.p_c.as_ref().unwrap(),
            FD_STEP,
        ),
    }
}

fn logit_fd_common(model: &Model, out: &ModelOutput, j: usize) -> Array {
    match model.kind() {
        ModelKind::Vcbm => central_difference(
            |p_t| {
                let c = model.concept_activations(p_t).unwrap();
                model.diagnose(&c).unwrap().data()[j]
            },
            &out.p_t,
            FD_STEP,
        ),
        ModelKind::Mcb => central_difference(
            |p_t| {
                let g = model.gate_and_bottleneck(p_t, out.p_c.as_ref().unwrap()).unwrap();
                model.diagnose(&g.z).unwrap().data()[j]
            },
            &out.p_t,
            FD_STEP,
        ),
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn closed_form_gradients_agree_with_autodiff_and_finite_differences() {
    for seed in 0..10u64 {
        for kind in [ModelKind::Mcb, ModelKind::Vcbm] {
            let model = tiny(kind, seed);
            let out = model.forward_ids(&random_ids(seed + 100)).unwrap();
            for j in 0..3 {
                let closed = head_gradient(&model, &out, j).unwrap();
                let auto = head_gradient_autodiff(&model, &out, j).unwrap();
                let fd = logit_fd_head(&model, &out, j);
                assert!(
                    max_abs(&closed, &auto) <= 1e-10,
                    "{kind:?} seed {seed} head vs autodiff"
                );
                assert!(
                    max_relative_error(&closed, fd.data()) <= 1e-5,
                    "{kind:?} seed {seed} head vs fd"
                );

                let closed = common_surface_gradient(&model, &out, j).unwrap();
                let auto = common_surface_gradient_autodiff(&model, &out, j).unwrap();
                let fd = logit_fd_common(&model, &out, j);
                assert!(max_abs(&closed, &auto) <= 1e-10, "{kind:?} seed {seed} p_t vs autodiff");
                assert!(
                    max_relative_error(&closed, fd.data()) <= 1e-5,
                    "{kind:?} seed {seed} p_t vs fd"
                );
            }
        }
    }
}

#[test]
fn vcbm_head_gradient_is_the_weight_row() {
    let mut model = tiny(ModelKind::Vcbm, 3);
    let w = model.param_mut("head.w_d").unwrap();
    w.row_slice_mut(1).copy_from_slice(&[3.0, 4.0, 0.0, 0.0]);
    for seed in 0..5 {
        let out = model.forward_ids(&random_ids(seed)).unwrap();
        let g = head_gradient(&model, &out, 1).unwrap();
        assert_eq!(g, vec![3.0, 4.0, 0.0, 0.0]);
        assert_eq!(g.iter().map(|x| x * x).sum::<f64>().sqrt(), 5.0);
    }
}

#[test]
fn zero_gate_weights_give_half_gate() {
    let mut model = tiny(ModelKind::Mcb, 4);
    for name in ["gate.w1", "gate.b1", "gate.w2", "gate.b2"] {
        model.param_mut(name).unwrap().fill(0.0);
    }
    let out = model.forward_ids(&random_ids(9)).unwrap();
    assert!(out.g.as_ref().unwrap().data().iter().all(|&g| g == 0.5));
    for j in 0..3 {
        let closed = head_gradient(&model, &out, j).unwrap();
        let auto = head_gradient_autodiff(&model, &out, j).unwrap();
        assert!(max_abs(&closed, &auto) <= 1e-10);
    }
}

#[test]
fn zeroed_pt_block_gives_zero_common_surface_gradient() {
    let mut model = tiny(ModelKind::Mcb, 5);
    let h = model.hidden();
    let w1 = model.param_mut("gate.w1").unwrap();
    for r in 0..w1.rows() {
        w1.row_slice_mut(r)[..h].fill(0.0);
    }
    let out = model.forward_ids(&random_ids(2)).unwrap();
    for j in 0..3 {
        assert!(common_surface_gradient(&model, &out, j)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }
}

#[test]
fn saturated_vcbm_concepts_attenuate_the_common_surface() {
    let mut model = tiny(ModelKind::Vcbm, 6);
    model.param_mut("concept_head.b_c").unwrap().fill(40.0);
    let out = model.forward_ids(&random_ids(1)).unwrap();
    for j in 0..3 {
        let g = common_surface_gradient(&model, &out, j).unwrap();
        assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12);
        assert!(head_gradient(&model, &out, j).unwrap().iter().any(|&x| x != 0.0));
    }
}

#[test]
fn relu_boundary_uses_zero_indicator() {
    let mut model = tiny(ModelKind::Mcb, 7);
    let h = model.hidden();
    // Row 0 of W1 sees only p_t; with p_t = 0 and b1[0] = 0, h1[0] is exactly 0.
    model.param_mut("gate.w1").unwrap().row_slice_mut(0)[h..].fill(0.0);
    model.param_mut("gate.b1").unwrap().data_mut()[0] = 0.0;
    let mut out = model.forward_ids(&random_ids(3)).unwrap();
    out.p_t = Array::zeros(out.p_t.shape());
    let gate = model.gate_and_bottleneck(&out.p_t, out.p_c.as_ref().unwrap()).unwrap();
    assert_eq!(gate.h1.data()[0], 0.0);
    out.h1 = Some(gate.h1);
    out.h2 = Some(gate.h2);
    out.g = Some(gate.g);
    out.u = Some(gate.u);
    out.z = Some(gate.z);
    for j in 0..3 {
        let closed = head_gradient(&model, &out, j).unwrap();
        let auto = head_gradient_autodiff(&model, &out, j).unwrap();
        assert!(max_abs(&closed, &auto) <= 1e-10);
        let closed = common_surface_gradient(&model, &out, j).unwrap();
        let auto = common_surface_gradient_autodiff(&model, &out, j).unwrap();
        assert!(max_abs(&closed, &auto) <= 1e-10);
    }
}

fn pred_set(
    labels: Vec<Vec<u8>>,
    decisions: Vec<Vec<u8>>,
    concepts: Vec<Vec<f64>>,
    pseudo: Vec<Vec<u8>>,
) -> PredictionSet {
    let n = labels.len();
    let l = labels[0].len();
    let c = pseudo[0].len();
    let scores = decisions
        .iter()
        .map(|r| r.iter().map(|&d| if d == 1 { 0.9 } else { 0.1 }).collect())
        .collect();
    PredictionSet::new(
        (0..n).map(|i| format!("n{i}")).collect(),
        (0..l).map(|j| format!("L{j}")).collect(),
        (0..c).map(|k| format!("c{k}")).collect(),
        0.5,
        scores,
        labels,
        concepts,
        pseudo,
    )
    .unwrap()
}

fn topc_of(entries: Vec<Vec<usize>>) -> TopCMap {
    TopCMap {
        k: 5,
        entries: entries
            .into_iter()
            .map(|e| e.into_iter().map(|c| (c, 0.0)).collect())
            .collect(),
        zero_variance: vec![],
    }
}

#[test]
fn cstpr_three_sample_hand_case() {
    // Label 0 has positives 0 and 1; only sample 0 is predicted and supported.
    // Label 1 has positive 2, predicted, supported through concept 1.
    let pred = pred_set(
        vec![vec![1, 0], vec![1, 0], vec![0, 1]],
        vec![vec![1, 0], vec![1, 0], vec![0, 1]],
        vec![vec![0.9, 0.2], vec![0.4, 0.9], vec![0.1, 0.8]],
        vec![vec![1, 0], vec![1, 1], vec![0, 1]],
    );
    let topc = topc_of(vec![vec![0], vec![1]]);
    let r = cstpr(&pred, &topc).unwrap();
    assert_eq!(r.per_label, vec![Some(0.5), Some(1.0)]);
    assert_eq!(r.macro_value, 0.75);
}

#[test]
fn cstpr_trivial_extremes() {
    let labels = vec![vec![1, 1], vec![1, 0]];
    let pseudo = vec![vec![1, 1], vec![1, 1]];
    let topc = topc_of(vec![vec![0, 1], vec![1]]);
    let perfect = pred_set(labels.clone(), labels.clone(), vec![vec![0.9, 0.9]; 2], pseudo.clone());
    assert_eq!(cstpr(&perfect, &topc).unwrap().macro_value, 1.0);
    let dead = pred_set(labels.clone(), labels.clone(), vec![vec![0.0, 0.0]; 2], pseudo);
    assert_eq!(cstpr(&dead, &topc).unwrap().macro_value, 0.0);
}

#[test]
fn ccr_four_sample_hand_case() {
    let pred = pred_set(
        vec![vec![1], vec![1], vec![1], vec![0]],
        vec![vec![1], vec![0], vec![1], vec![1]],
        vec![vec![0.0, 0.0]; 4],
        vec![vec![1, 0], vec![1, 1], vec![0, 1], vec![1, 1]],
    );
    let topc = topc_of(vec![vec![0, 1]]);
    let r = ccr(&pred, &topc).unwrap();
    // c0: samples 0, 1 -> 1/2. c1: samples 1, 2 -> 1/2.
    assert_eq!(r.pairs.len(), 2);
    assert_eq!(r.pairs[0].value, 0.5);
    assert_eq!(r.pairs[1].value, 0.5);
    assert_eq!(r.aggregate, 0.5);
    let zero = pred_set(
        vec![vec![1], vec![1]],
        vec![vec![0], vec![0]],
        vec![vec![0.0]; 2],
        vec![vec![1], vec![1]],
    );
    assert_eq!(ccr(&zero, &topc_of(vec![vec![0]])).unwrap().aggregate, 0.0);
    let none = pred_set(vec![vec![0]], vec![vec![0]], vec![vec![0.0]], vec![vec![1]]);
    assert!(ccr(&none, &topc_of(vec![vec![0]])).is_err());
}

fn note(id: &str, text: &str, labels: Vec<u8>) -> Note {
    Note::new(id, text, vec![0; 4], labels)
}

#[test]
fn span_matching_is_whole_word_and_case_insensitive() {
    let n = note("a", "Fever and feverish cough. no FEVER.", vec![1, 0, 0]);
    let spans = masked_token_spans(&n, &["fever"]).unwrap();
    let toks: Vec<&str> = n.tokens.iter().map(|t| t.text.as_str()).collect();
    assert_eq!(toks[0], "fever");
    assert_eq!(spans, vec![(0, 1), (6, 7)]);
    assert!(masked_token_spans(&n, &["rash"]).unwrap().is_empty());
}

fn notes_and_pred(model: &Model) -> (Vec<Note>, PredictionSet) {
    let notes = vec![
        note("a", "patient fever . cough .", vec![1, 1, 0]),
        note("b", "no rash . pain .", vec![0, 1, 1]),
        note("c", "patient . .", vec![1, 0, 0]),
    ];
    let refs: Vec<&Note> = notes.iter().collect();
    let pseudo = vec![vec![1, 1, 0, 0], vec![0, 0, 0, 1], vec![0, 0, 0, 0]];
    let mut pred = mcb_core::model::predict(model, &refs, &pseudo, 0.5).unwrap();
    pred = pred.clone().with_decisions(pred.labels.clone()).unwrap();
    (notes, pred)
}

#[test]
fn constant_model_has_zero_drops_and_unit_sign_test() {
    let mut model = tiny(ModelKind::Mcb, 8);
    model.param_mut("head.w_d").unwrap().fill(0.0);
    let (notes, pred) = notes_and_pred(&model);
    let refs: Vec<&Note> = notes.iter().collect();
    let topc = topc_of(vec![vec![0, 1], vec![1, 3], vec![2, 3]]);
    let r = mask_intervention(&model, &refs, &pred, &topc, 100, 200, 42).unwrap();
    assert!(r.valid_pairs > 0);
    assert!(r
        .records
        .iter()
        .all(|x| x.target_drop() == 0.0 && x.control_drop == 0.0));
    assert_eq!(r.sign_test_p, 1.0);
    assert_eq!(r.mean_difference, 0.0);
}

#[test]
fn unmatched_pairs_are_invalid_and_output_is_untouched() {
    let model = tiny(ModelKind::Mcb, 9);
    let (notes, pred) = notes_and_pred(&model);
    let refs: Vec<&Note> = notes.iter().collect();
    let topc = topc_of(vec![vec![2], vec![0], vec![3]]);
    let r = mask_intervention(&model, &refs, &pred, &topc, 100, 200, 1).unwrap();
    for rec in &r.records {
        if !rec.valid {
            assert!(rec.masked_spans.is_empty());
            assert_eq!(rec.p_before.to_bits(), rec.p_after.to_bits());
        }
    }
    // Note c has a single positive label, so its control drop is zero.
    let c = r.records.iter().find(|x| x.note_id == "c").unwrap();
    assert_eq!(c.control_drop, 0.0);
    assert!(!c.valid);
    assert_eq!(r.valid_pairs, r.records.iter().filter(|x| x.valid).count());
}

#[test]
fn cim_vcbm_is_constant_over_copos() {
    let mut model = tiny(ModelKind::Vcbm, 10);
    model
        .param_mut("head.w_d")
        .unwrap()
        .row_slice_mut(0)
        .copy_from_slice(&[3.0, 4.0, 0.0, 0.0]);
    let (notes, pred) = notes_and_pred(&model);
    let refs: Vec<&Note> = notes.iter().collect();
    let r = cim(&model, &refs, &pred, PairSelection::All, CimSurface::Head).unwrap();
    for p in r.pairs.iter().filter(|p| p.label == 0) {
        assert_eq!(p.value, 5.0);
    }
}

proptest! {
    #[test]
    fn cstpr_never_exceeds_recall(
        rows in prop::collection::vec(
            (prop::collection::vec(0u8..2, 3), prop::collection::vec(0u8..2, 3),
             prop::collection::vec(0.0f64..1.0, 4), prop::collection::vec(0u8..2, 4)),
            1..30),
        picks in prop::collection::vec(prop::collection::vec(0usize..4, 1..5), 3),
    ) {
        let mut labels: Vec<Vec<u8>> = rows.iter().map(|r| r.0.clone()).collect();
        labels[0] = vec![1, 1, 1];
        let decisions = rows.iter().map(|r| r.1.clone()).collect();
        let concepts = rows.iter().map(|r| r.2.clone()).collect();
        let pseudo = rows.iter().map(|r| r.3.clone()).collect();
        let pred = pred_set(labels, decisions, concepts, pseudo);
        let topc = topc_of(picks);
        let r = cstpr(&pred, &topc).unwrap();
        for j in 0..3 {
            let pos: Vec<usize> = (0..pred.len()).filter(|&i| pred.labels[i][j] == 1).collect();
            let tp = pos.iter().filter(|&&i| pred.decisions[i][j] == 1).count();
            let recall = tp as f64 / pos.len() as f64;
            prop_assert!(r.per_label[j].unwrap() <= recall);
        }
    }

    #[test]
    fn topc_has_min_k_c_entries(
        rows in prop::collection::vec((prop::collection::vec(0u8..2, 7), prop::collection::vec(0u8..2, 2)), 1..40),
        k in 1usize..10,
    ) {
        let pseudo: Vec<Vec<u8>> = rows.iter().map(|r| r.0.clone()).collect();
        let labels: Vec<Vec<u8>> = rows.iter().map(|r| r.1.clone()).collect();
        let t = build_topc(&pseudo, &labels, k).unwrap();
        for e in &t.entries {
            prop_assert_eq!(e.len(), k.min(7));
            for w in e.windows(2) {
                prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
        }
    }
}
