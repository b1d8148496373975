//! Tape operators against central differences, plus attention, LayerNorm
//! and loss properties.

use mcb_core::numcore::check::{central_difference, max_relative_error, FD_STEP};
use mcb_core::numcore::nn::attention_weights;
use mcb_core::numcore::{
    bce_loss, cosine_align_loss, focal_loss, layer_norm, mha, mha_forward, Array, MhaWeights, Tape, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

type Build = dyn for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var;

/// Max relative error between reverse-mode and finite-difference gradients
/// of `sum(build(inputs) ⊙ r)` for a fixed random `r`.
fn fd_error(inputs: &[Array], build: &Build, seed: u64) -> f64 {
    let shape = {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|a| t.constant(a)).collect();
        let out = build(&mut t, &vs);
        t.value(out).shape().to_vec()
    };
    let r = rand_array(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &shape, -1.0, 1.0);
    let scalar = |xs: &[Array]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|a| t.constant(a)).collect();
        let out = build(&mut t, &vs);
        t.value(out)
            .data()
            .iter()
            .zip(r.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let mut t = Tape::new();
    let vs: Vec<Var> = inputs.iter().map(|a| t.leaf(a)).collect();
    let out = build(&mut t, &vs);
    let rv = t.constant(&r);
    let prod = t.mul(out, rv).unwrap();
    let total = t.sum(prod);
    let grads = t.backward(total).unwrap();
    let mut worst = 0.0f64;
    for (i, x) in inputs.iter().enumerate() {
        let fd = central_difference(
            |probe| {
                let mut xs = inputs.to_vec();
                xs[i] = probe.clone();
                scalar(&xs)
            },
            x,
            FD_STEP,
        );
        let analytic = grads.get(vs[i]).cloned().unwrap_or_else(|| Array::zeros(x.shape()));
        worst = worst.max(max_relative_error(analytic.data(), fd.data()));
    }
    worst
}

fn check_op(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Array>, build: &Build) {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        let err = fd_error(&inputs, build, seed);
        assert!(err <= 1e-6, "{name} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn elementwise_and_linear_operators() {
    let pair = |r: &mut ChaCha8Rng| vec![rand_array(r, &[3, 4], -2.0, 2.0), rand_array(r, &[3, 4], -2.0, 2.0)];
    check_op("add", pair, &|t, v| t.add(v[0], v[1]).unwrap());
    check_op("sub", pair, &|t, v| t.sub(v[0], v[1]).unwrap());
    check_op("mul", pair, &|t, v| t.mul(v[0], v[1]).unwrap());
    check_op("scale", pair, &|t, v| t.scale(v[0], -1.7));
    check_op("sigmoid", pair, &|t, v| t.sigmoid(v[0]));
    check_op("relu", pair, &|t, v| t.relu(v[1]));
    check_op("softmax_rows", pair, &|t, v| t.softmax_rows(v[0]));
    check_op(
        "matmul",
        |r| vec![rand_array(r, &[3, 4], -1.0, 1.0), rand_array(r, &[4, 2], -1.0, 1.0)],
        &|t, v| t.matmul(v[0], v[1]).unwrap(),
    );
    check_op("matmul_bt", pair, &|t, v| t.matmul_bt(v[0], v[1]).unwrap());
    check_op(
        "add_row",
        |r| vec![rand_array(r, &[3, 4], -1.0, 1.0), rand_array(r, &[4], -1.0, 1.0)],
        &|t, v| t.add_row(v[0], v[1]).unwrap(),
    );
    check_op(
        "linear",
        |r| {
            vec![
                rand_array(r, &[3, 4], -1.0, 1.0),
                rand_array(r, &[5, 4], -1.0, 1.0),
                rand_array(r, &[5], -1.0, 1.0),
            ]
        },
        &|t, v| t.linear(v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn structural_operators() {
    let pair = |r: &mut ChaCha8Rng| vec![rand_array(r, &[3, 4], -2.0, 2.0), rand_array(r, &[3, 2], -2.0, 2.0)];
    check_op("concat_cols", pair, &|t, v| t.concat_cols(&[v[0], v[1]]).unwrap());
    check_op("slice_cols", pair, &|t, v| t.slice_cols(v[0], 1, 2).unwrap());
    check_op("slice_rows", pair, &|t, v| t.slice_rows(v[0], 1, 2).unwrap());
    check_op("mean_rows", pair, &|t, v| t.mean_rows(v[0]).unwrap());
    check_op("sum", pair, &|t, v| t.sum(v[0]));
    check_op("mean", pair, &|t, v| t.mean(v[1]));
    check_op("gather", pair, &|t, v| t.gather(v[0], &[2, 0, 2, 1]).unwrap());
    check_op(
        "layer_norm_rows",
        |r| {
            vec![
                rand_array(r, &[3, 5], -2.0, 2.0),
                rand_array(r, &[5], 0.5, 1.5),
                rand_array(r, &[5], -1.0, 1.0),
            ]
        },
        &|t, v| t.layer_norm_rows(v[0], v[1], v[2], 1e-5).unwrap(),
    );
}

#[test]
fn loss_operators() {
    let targets = [1.0, 0.0, 1.0, 0.0, 0.0];
    let one =
        |lo: f64, hi: f64| move |r: &mut ChaCha8Rng| vec![rand_array(r, &[5], lo, hi), rand_array(r, &[5], lo, hi)];
    check_op("focal_loss", one(-3.0, 3.0), &move |t, v| {
        t.focal_loss(v[0], &targets, 2.0, 0.25).unwrap()
    });
    check_op("bce_loss", one(0.05, 0.95), &move |t, v| {
        t.bce_loss(v[0], &targets).unwrap()
    });
    check_op("cosine_align_loss", one(-1.0, 1.0), &|t, v| {
        t.cosine_align_loss(v[0], v[1]).unwrap()
    });
}

fn random_mha(rng: &mut ChaCha8Rng, h: usize) -> MhaWeights {
    let s = 1.0 / (h as f64).sqrt();
    MhaWeights {
        w_q: rand_array(rng, &[h, h], -s, s),
        b_q: rand_array(rng, &[h], -0.1, 0.1),
        w_k: rand_array(rng, &[h, h], -s, s),
        b_k: rand_array(rng, &[h], -0.1, 0.1),
        w_v: rand_array(rng, &[h, h], -s, s),
        b_v: rand_array(rng, &[h], -0.1, 0.1),
        w_o: rand_array(rng, &[h, h], -s, s),
        b_o: rand_array(rng, &[h], -0.1, 0.1),
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_mha(&mut rng, 4);
        let inputs = vec![
            rand_array(&mut rng, &[2, 4], -1.0, 1.0),
            rand_array(&mut rng, &[5, 4], -1.0, 1.0),
            w.w_q.clone(),
            w.w_o.clone(),
        ];
        let rest = w.clone();
        let build = move |t: &mut Tape<'_>, v: &[Var]| {
            let vars = mcb_core::numcore::MhaVars {
                w_q: v[2],
                b_q: t.constant(rest.b_q.clone()),
                w_k: t.constant(rest.w_k.clone()),
                b_k: t.constant(rest.b_k.clone()),
                w_v: t.constant(rest.w_v.clone()),
                b_v: t.constant(rest.b_v.clone()),
                w_o: v[3],
                b_o: t.constant(rest.b_o.clone()),
            };
            mha(t, v[0], v[1], v[1], 2, &vars).unwrap()
        };
        let err = fd_error(&inputs, &build, seed);
        assert!(err <= 1e-6, "mha seed {seed}: {err:e}");
    }
}

#[test]
fn single_key_attention_returns_projected_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random_mha(&mut rng, 4);
    let q = rand_array(&mut rng, &[3, 4], -1.0, 1.0);
    let kv = rand_array(&mut rng, &[1, 4], -1.0, 1.0);
    let out = mha_forward(&q, &kv, &kv, 2, &w).unwrap();
    // With one key every weight is 1, so each row is W_o (W_v v + b_v) + b_o.
    let vp: Vec<f64> = (0..4)
        .map(|i| (0..4).map(|k| w.w_v.get(i, k) * kv.get(0, k)).sum::<f64>() + w.b_v.data()[i])
        .collect();
    let want: Vec<f64> = (0..4)
        .map(|i| (0..4).map(|k| w.w_o.get(i, k) * vp[k]).sum::<f64>() + w.b_o.data()[i])
        .collect();
    for r in 0..3 {
        for (a, b) in out.row_slice(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_computed_two_by_two_attention() {
    let w = MhaWeights::identity(2);
    let q = Array::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let k = q.clone();
    let v = Array::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
    let out = mha_forward(&q, &k, &v, 1, &w).unwrap();
    // Scores diag 1/sqrt(2), off-diag 0.
    let a = (1.0f64 / 2f64.sqrt()).exp();
    let (p, r) = (a / (a + 1.0), 1.0 / (a + 1.0));
    let want = [2.0 * p, 4.0 * r, 2.0 * r, 4.0 * p];
    for (x, y) in out.data().iter().zip(want) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn attention_shape_errors() {
    let w = MhaWeights::identity(4);
    let q = Array::zeros(&[1, 4]);
    assert!(mha_forward(&q, &q, &q, 3, &w).is_err());
    assert!(mha_forward(&q, &Array::zeros(&[0, 4]), &Array::zeros(&[0, 4]), 2, &w).is_err());
    assert!(mha_forward(&q, &Array::zeros(&[2, 3]), &Array::zeros(&[2, 3]), 2, &w).is_err());
}

proptest! {
    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, m in 1usize..5, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_mha(&mut rng, 4);
        let q = rand_array(&mut rng, &[m, 4], -3.0, 3.0);
        let k = rand_array(&mut rng, &[n, 4], -3.0, 3.0);
        for a in attention_weights(&q, &k, 2, &w).unwrap() {
            for r in 0..m {
                let s: f64 = a.row_slice(r).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_standardises(seed in 0u64..1000, h in 2usize..32, spread in 0.05f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = rand_array(&mut rng, &[h], -spread, spread);
        let mean = u.data().iter().sum::<f64>() / h as f64;
        let var = u.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / h as f64;
        prop_assume!(var >= 1e-3);
        let eps = 1e-5;
        let z = layer_norm(&u, &Array::filled(&[h], 1.0), &Array::zeros(&[h]), eps).unwrap();
        let zm = z.data().iter().sum::<f64>() / h as f64;
        let zv = z.data().iter().map(|x| (x - zm).powi(2)).sum::<f64>() / h as f64;
        prop_assert!(zm.abs() <= 1e-12);
        // Exact variance is var / (var + eps).
        prop_assert!((zv - 1.0).abs() <= eps / var + 1e-12);
    }

    #[test]
    fn losses_are_non_negative_and_finite(
        logits in prop::collection::vec(-800.0f64..800.0, 1..8),
        act in prop::collection::vec(0.0f64..=1.0, 1..8),
        bits in prop::collection::vec(0u8..2, 8),
        a in prop::collection::vec(-5.0f64..5.0, 3),
        b in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let t: Vec<f64> = bits[..logits.len()].iter().map(|&x| x as f64).collect();
        let f = focal_loss(&logits, &t, 2.0, 0.25).unwrap();
        prop_assert!(f.is_finite() && f >= 0.0);
        let t: Vec<f64> = bits[..act.len()].iter().map(|&x| x as f64).collect();
        let l = bce_loss(&act, &t).unwrap();
        prop_assert!(l.is_finite() && l >= 0.0);
        if let Ok(c) = cosine_align_loss(&a, &b) {
            prop_assert!(c.is_finite() && (0.0..=2.0 + 1e-12).contains(&c));
        }
    }
}
