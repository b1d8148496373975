use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Split};
use crate::error::{Error, Result};

/// Split sizes for `n` items by largest remainder: each part gets
/// `floor(ratio · n)` and the leftover items go one at a time to the parts
/// with the largest fractional remainders (ties in train, val, test order).
pub fn split_counts(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|&r| r.is_nan() || r <= 0.0 || !r.is_finite()) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {total}, expected 1")));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        // Guard against 0.7 * 10 = 6.999… style representation error.
        *c = (e + 1e-9).floor() as usize;
    }
    let mut left = n.saturating_sub(counts.iter().sum());
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    Ok(counts)
}

/// Uniformly random split assignment with sizes from [`split_counts`].
pub fn split_dataset(dataset: Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    let n = dataset.notes.len();
    let [n_train, n_val, _] = split_counts(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(Dataset { splits, ..dataset })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_items_seventy_fifteen_fifteen() {
        // floors (7, 1, 1); one leftover, val and test tie at .5, val wins.
        assert_eq!(split_counts(10, [0.7, 0.15, 0.15]).unwrap(), [7, 2, 1]);
    }

    #[test]
    fn counts_always_sum_to_n() {
        for n in 0..200 {
            let c = split_counts(n, [0.7, 0.15, 0.15]).unwrap();
            assert_eq!(c.iter().sum::<usize>(), n);
        }
        assert_eq!(split_counts(2000, [0.7, 0.15, 0.15]).unwrap(), [1400, 300, 300]);
    }

    #[test]
    fn rejects_zero_or_bad_ratios() {
        assert!(split_counts(100, [1.0, 0.0, 0.0]).is_err());
        assert!(split_counts(100, [0.5, 0.3, 0.3]).is_err());
    }
}
