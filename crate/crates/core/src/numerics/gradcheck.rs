//! Central finite-difference gradient oracle.
//!
//! Perturbs raw parameter values one at a time and re-runs the forward
//! closure, so it is independent of the tape's reverse sweep.

/// Central finite difference of `f` at `params`, step `h`, one entry per
/// parameter value. `f` must be a pure function of the flattened values.
pub fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; params.len()];
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = f(&work);
        work[i] = orig - h;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Worst relative error between an analytic gradient and its
/// finite-difference estimate, with an absolute floor so near-zero
/// entries do not blow the ratio up.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let denom = a.abs().max(n.abs()).max(1e-4);
            (a - n).abs() / denom
        })
        .fold(0.0, f64::max)
}
