//! Central finite-difference utilities used by the gradient test suites.
//!
//! These deliberately recompute losses from scratch through the forward
//! path only, independent of the reverse-mode code they are checking.

/// Central finite differences of `f` at `x`, one derivative per entry.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let plus = f(&probe);
        probe[i] = x[i] - eps;
        let minus = f(&probe);
        probe[i] = x[i];
        out.push((plus - minus) / (2.0 * eps));
    }
    out
}

/// Largest relative error between two gradient vectors, with an absolute
/// floor below which differences are ignored.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], abs_floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(n.abs()).max(abs_floor)
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_square() {
        let mut f = |x: &[f64]| x[0] * x[0] + 3.0 * x[1];
        let g = central_diff(&mut f, &[2.0, -1.0], 1e-6);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rel_error_respects_floor() {
        assert_eq!(max_rel_error(&[0.0], &[1e-9], 1e-6), 0.0);
        assert!(max_rel_error(&[1.0], &[1.1], 1e-6) > 0.05);
    }
}
