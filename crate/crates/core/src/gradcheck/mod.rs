//! Central finite differences, used as an independent gradient oracle.

pub mod suite;

use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms; central
/// differences carry roughly `1e-10` of noise at `eps = 1e-5`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`, one element at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    assert!(eps > 0.0, "finite difference step must be positive");
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Central difference along a single coordinate of `x`.
pub fn finite_diff_at(f: impl Fn(&Tensor) -> f64, x: &Tensor, index: usize, eps: f64) -> f64 {
    let mut probe = x.clone();
    let orig = probe.data()[index];
    probe.data_mut()[index] = orig + eps;
    let up = f(&probe);
    probe.data_mut()[index] = orig - eps;
    let down = f(&probe);
    (up - down) / (2.0 * eps)
}

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest elementwise [`relative_error`] between two same-shaped tensors.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic.data().iter().zip(numeric.data()).map(|(a, n)| relative_error(*a, *n)).fold(0.0, f64::max)
}
