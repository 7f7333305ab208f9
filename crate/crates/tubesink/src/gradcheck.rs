//! Central finite differences for verifying analytic gradients.
//!
//! Deliberately knows nothing about the tape: it only re-evaluates a scalar
//! loss function at perturbed inputs, so it stays an independent check of the
//! backward pass.

use crate::tensor::Tensor;

/// Central-difference gradient of `f` at `theta`, one evaluation pair per
/// coordinate. Step is scaled per coordinate by its magnitude.
pub fn finite_difference(theta: &Tensor, h: f64, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let mut grad = Tensor::zeros(theta.rows(), theta.cols());
    let mut work = theta.clone();
    for i in 0..theta.rows() {
        for j in 0..theta.cols() {
            let orig = theta.get(i, j);
            let step = h * orig.abs().max(1.0);
            work.set(i, j, orig + step);
            let up = f(&work);
            work.set(i, j, orig - step);
            let down = f(&work);
            work.set(i, j, orig);
            grad.set(i, j, (up - down) / (2.0 * step));
        }
    }
    grad
}

/// Worst relative error between analytic and finite-difference gradients.
///
/// Per-coordinate error is |a - f| / max(|a|, |f|, floor) so tiny gradients
/// do not blow up the ratio.
pub fn max_relative_error(analytic: &Tensor, fd: &Tensor, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), fd.shape(), "gradcheck shape mismatch");
    let mut worst = 0.0f64;
    for (a, f) in analytic.as_slice().iter().zip(fd.as_slice()) {
        let denom = a.abs().max(f.abs()).max(floor);
        worst = worst.max((a - f).abs() / denom);
    }
    worst
}
