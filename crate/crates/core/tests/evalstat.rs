//! Metric and bootstrap properties on random prediction sets.

use mcb_core::evalstat::{
    auc_scores, bootstrap_ci, default_bin_sizes, f1_scores, longtail_binned_f1, paired_bootstrap,
    precision_recall_decomposition, read_predictions, resample, sign_test, topk_metrics, write_predictions, Metric,
    PredictionSet,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_set(seed: u64, n: usize, l: usize) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..l).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect())
        .collect();
    let mut labels: Vec<Vec<u8>> = (0..n).map(|_| (0..l).map(|_| rng.gen_range(0..2)).collect()).collect();
    // Guarantee both classes in label 0 so AUC is defined.
    labels[0][0] = 1;
    labels[n - 1][0] = 0;
    PredictionSet::new(
        (0..n).map(|i| format!("n{i}")).collect(),
        (0..l).map(|j| format!("L{j}")).collect(),
        vec!["a".into(), "b".into()],
        0.5,
        scores,
        labels,
        (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect(),
        (0..n).map(|_| vec![rng.gen_range(0..2), rng.gen_range(0..2)]).collect(),
    )
    .unwrap()
}

fn all_metrics(l: usize) -> Vec<Metric> {
    let mut m = vec![
        Metric::MacroF1,
        Metric::MicroF1,
        Metric::MacroAuc,
        Metric::MicroAuc,
        Metric::MacroPrecision,
        Metric::MacroRecall,
        Metric::MicroPrecision,
        Metric::MicroRecall,
    ];
    for k in 1..=l {
        m.push(Metric::PrecisionAt(k));
        m.push(Metric::RecallAt(k));
    }
    m
}

#[test]
fn hand_four_by_three_case() {
    let p = PredictionSet::new(
        (0..4).map(|i| i.to_string()).collect(),
        vec!["a".into(), "b".into(), "c".into()],
        vec![],
        0.5,
        vec![
            vec![0.9, 0.2, 0.1],
            vec![0.8, 0.7, 0.3],
            vec![0.1, 0.6, 0.2],
            vec![0.4, 0.3, 0.2],
        ],
        vec![vec![1, 0, 0], vec![0, 1, 0], vec![1, 1, 0], vec![1, 0, 0]],
        vec![vec![]; 4],
        vec![vec![]; 4],
    )
    .unwrap();
    // Label a: TP 1, FP 1, FN 2. Label b: TP 2, FP 0, FN 0. Label c: all zero.
    let f = f1_scores(&p).unwrap();
    assert_eq!(f.per_label, vec![2.0 / 5.0, 1.0, 0.0]);
    assert_eq!(f.macro_f1, (0.4 + 1.0) / 3.0);
    assert_eq!(f.micro_f1, 6.0 / 9.0);
    let pr = precision_recall_decomposition(&p).unwrap();
    assert_eq!(pr.micro_precision, 3.0 / 4.0);
    assert_eq!(pr.micro_recall, 3.0 / 5.0);
}

#[test]
fn dump_roundtrip_is_exact() {
    let p = random_set(11, 30, 4);
    let mut buf = Vec::new();
    write_predictions(&p, &mut buf).unwrap();
    assert_eq!(read_predictions(&buf[..], "mem").unwrap(), p);
    let mut again = Vec::new();
    write_predictions(&read_predictions(&buf[..], "mem").unwrap(), &mut again).unwrap();
    assert_eq!(buf, again);
    assert!(read_predictions(&buf[..buf.len() / 2], "half").is_err());
}

#[test]
fn sign_test_matches_exact_binomial_sums() {
    for n in 1..=30u64 {
        let pmf: Vec<f64> = (0..=n)
            .map(|k| {
                let mut c = 1.0;
                for i in 0..k {
                    c = c * (n - i) as f64 / (i + 1) as f64;
                }
                c / 2f64.powi(n as i32)
            })
            .collect();
        for k in 0..=n {
            let lower: f64 = pmf[..=k as usize].iter().sum();
            let upper: f64 = pmf[k as usize..].iter().sum();
            let want = (2.0 * lower.min(upper)).min(1.0);
            let got = sign_test(k, n).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15, "k {k} n {n}");
        }
    }
    assert_eq!(sign_test(0, 0).unwrap(), 1.0);
    assert!(sign_test(5, 4).is_err());
}

#[test]
fn bootstrap_ci_brackets_the_mean() {
    let v: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (point, lo, hi) = bootstrap_ci(&v, mean, 500, 1).unwrap();
    assert!(lo <= point && point <= hi);
    assert!(bootstrap_ci(&[], mean, 10, 1).is_err());
}

#[test]
fn longtail_bins_partition_labels_by_training_count() {
    let p = random_set(2, 40, 6);
    let bins = longtail_binned_f1(&p, &[5, 50, 20, 20, 1, 7], default_bin_sizes(6)).unwrap();
    assert_eq!(bins[0].labels, vec![1, 2]);
    assert_eq!(bins[1].labels, vec![3, 5]);
    assert_eq!(bins[2].labels, vec![0, 4]);
    assert!(longtail_binned_f1(&p, &[1; 6], [1, 1, 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_permutation_invariant(seed in 0u64..10_000, n in 2usize..40) {
        let p = random_set(seed, n, 4);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        let q = p.select(&order);
        for m in all_metrics(4) {
            match (m.eval(&p), m.eval(&q)) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12, "{}", m.name()),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn recall_at_k_is_non_decreasing(seed in 0u64..10_000, n in 2usize..40) {
        let p = random_set(seed, n, 5);
        let r = topk_metrics(&p, &[1, 2, 3, 4, 5]).unwrap();
        for w in r.windows(2) {
            prop_assert!(w[1].recall.unwrap() >= w[0].recall.unwrap() - 1e-15);
        }
        prop_assert!((r[4].recall.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn swapping_systems_negates_the_bootstrap(seed in 0u64..10_000) {
        let a = random_set(seed, 25, 3);
        let mut b = random_set(seed + 7, 25, 3);
        b.labels = a.labels.clone();
        let b = PredictionSet::new(b.ids, b.label_codes, b.concept_names, 0.5, b.scores, b.labels, b.concepts, b.pseudo).unwrap();
        let f = |p: &PredictionSet| Metric::MicroF1.eval(p);
        let ab = paired_bootstrap(f, &a, &b, 200, seed).unwrap();
        let ba = paired_bootstrap(f, &b, &a, 200, seed).unwrap();
        prop_assert_eq!(ab.delta_point, -ba.delta_point);
        prop_assert!((ab.ci_low + ba.ci_high).abs() <= 1e-12);
        prop_assert!((ab.ci_high + ba.ci_low).abs() <= 1e-12);
        prop_assert_eq!(ab.p_two_sided, ba.p_two_sided);
        prop_assert!(ab.ci_low <= ab.ci_high);
        prop_assert!(ab.p_two_sided > 0.0 && ab.p_two_sided <= 1.0);
    }

    #[test]
    fn resample_is_deterministic_and_in_range(n in 1usize..100, seed in 0u64..1000, b in 0usize..50) {
        let r = resample(n, seed, b);
        prop_assert_eq!(r.len(), n);
        prop_assert!(r.iter().all(|&i| i < n));
        prop_assert_eq!(r, resample(n, seed, b));
    }

    #[test]
    fn scores_stay_in_unit_interval(seed in 0u64..10_000, n in 2usize..30) {
        let p = random_set(seed, n, 3);
        let f = f1_scores(&p).unwrap();
        let a = auc_scores(&p).unwrap();
        for v in [f.macro_f1, f.micro_f1, a.macro_auc, a.micro_auc] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
