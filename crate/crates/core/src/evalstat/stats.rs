use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use super::PredictionSet;
use crate::error::{Error, Result};

/// Outcome of a paired bootstrap comparison of system a against system b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub delta_point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_two_sided: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Linearly interpolated percentile of sorted `v` at fraction `q`, using
/// position `q · (len − 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices of bootstrap replicate `b` over `n` items. Each replicate draws
/// from its own ChaCha stream, so the result does not depend on
/// evaluation order.
pub fn resample(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// Paired bootstrap of `metric(a) − metric(b)` with shared resamples.
///
/// The two-sided p-value is `2 · min(Pr[Δ ≤ 0], Pr[Δ ≥ 0])` over the
/// replicates, capped at 1 and floored at `1/B`.
pub fn paired_bootstrap(
    metric: impl Fn(&PredictionSet) -> Result<f64>,
    a: &PredictionSet,
    b: &PredictionSet,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if a.is_empty() {
        return Err(Error::Input("cannot bootstrap an empty prediction set".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    if a.len() != b.len() || a.labels != b.labels {
        return Err(Error::Input("paired systems must share notes and labels".into()));
    }
    let delta_point = metric(a)? - metric(b)?;
    let mut deltas = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let idx = resample(a.len(), seed, r);
        deltas.push(metric(&a.select(&idx))? - metric(&b.select(&idx))?);
    }
    let le = deltas.iter().filter(|&&d| d <= 0.0).count();
    let ge = deltas.iter().filter(|&&d| d >= 0.0).count();
    let p = (2.0 * le.min(ge) as f64 / replicates as f64).clamp(1.0 / replicates as f64, 1.0);
    deltas.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        delta_point,
        ci_low: percentile(&deltas, 0.025),
        ci_high: percentile(&deltas, 0.975),
        p_two_sided: p,
        replicates,
        seed,
    })
}

/// Point estimate and 95% percentile interval of `statistic` over
/// bootstrap resamples of `values`.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: impl Fn(&[f64]) -> f64,
    replicates: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::Input("cannot bootstrap an empty sample".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    let point = statistic(values);
    let mut stats: Vec<f64> = (0..replicates)
        .map(|r| {
            let s: Vec<f64> = resample(values.len(), seed, r).into_iter().map(|i| values[i]).collect();
            statistic(&s)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok((point, percentile(&stats, 0.025), percentile(&stats, 0.975)))
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Exact two-sided binomial sign test of `k` successes in `n` trials
/// against p = 0.5: `2 · min(P[X ≤ k], P[X ≥ k])`, capped at 1.
pub fn sign_test(k: u64, n: u64) -> Result<f64> {
    if k > n {
        return Err(Error::Input(format!("successes {k} exceed trials {n}")));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let half = -(n as f64) * std::f64::consts::LN_2;
    let lower = log_sum_exp((0..=k).map(|i| ln_binomial(n, i) + half));
    let upper = log_sum_exp((k..=n).map(|i| ln_binomial(n, i) + half));
    Ok((std::f64::consts::LN_2 + lower.min(upper)).exp().min(1.0))
}
