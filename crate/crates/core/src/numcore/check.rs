//! Finite-difference utilities for checking analytic gradients.

use super::array::Array;

/// Step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of [`max_relative_error`]; below it the comparison is
/// effectively absolute.
pub const REL_FLOOR: f64 = 1e-3;

/// Central differences `(f(x + δe_i) - f(x - δe_i)) / 2δ` for every entry.
pub fn central_difference(mut f: impl FnMut(&Array) -> f64, x: &Array, step: f64) -> Array {
    let mut probe = x.clone();
    let mut out = Array::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, REL_FLOOR)`.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared gradients differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR))
        .fold(0.0, f64::max)
}
