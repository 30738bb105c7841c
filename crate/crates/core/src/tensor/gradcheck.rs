//! Central finite-difference verification support.
//!
//! This module is independent of the backward pass: it only ever calls a
//! user-supplied forward evaluation. Tests compare its output against
//! tape gradients. Meaningful only in 64-bit.

/// Central finite-difference gradient of `eval` at `x`.
pub fn fd_gradient(eval: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = eval(&probe);
        probe[i] = orig - step;
        let minus = eval(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Largest relative error between two gradient vectors, with an absolute
/// guard so near-zero entries do not blow up the ratio.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], abs_guard: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / abs_guard.max(a.abs()).max(n.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_matches_known_derivative() {
        let mut f = |x: &[f64]| x[0] * x[0] * x[1] + x[1].sin();
        let x = [1.3, -0.7];
        let g = fd_gradient(&mut f, &x, 1e-5);
        assert!((g[0] - 2.0 * x[0] * x[1]).abs() < 1e-9);
        assert!((g[1] - (x[0] * x[0] + x[1].cos())).abs() < 1e-9);
    }

    #[test]
    fn rel_err_uses_guard_near_zero() {
        let e = max_rel_err(&[0.0, 1.0], &[1e-12, 1.0], 1e-6);
        assert!(e < 1e-5);
    }
}
