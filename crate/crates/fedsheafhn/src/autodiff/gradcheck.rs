//! Central-finite-difference gradient checking.
//!
//! The numerical side only ever calls the forward function, so it stays
//! independent of the reverse-mode path it is used to validate.

/// Central differences of a scalar function at `point`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let plus = f(&probe);
        probe[i] = point[i] - step;
        let minus = f(&probe);
        probe[i] = point[i];
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// Relative error between paired gradient entries, with a unit floor on the
/// denominator so near-zero components are compared absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Checks a reverse-mode gradient against central differences.
///
/// `f` evaluates the scalar loss at a flat parameter vector. Returns the
/// worst relative error across components.
pub fn check_against(
    f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    step: f64,
) -> f64 {
    let numeric = central_diff(f, point, step);
    max_rel_err(analytic, &numeric)
}
