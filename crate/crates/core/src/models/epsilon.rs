//! Default rejection thresholds as a function of the known-class count.
//!
//! Thresholded softmax operates on L2-normalized activations, so the top
//! softmax probability is bounded: a unit-norm vector concentrating all its
//! mass on one class yields at most ≈ e/(e + k − 1). The default threshold
//! is 80% of that ceiling, which keeps rejection meaningful at every `k`.
//! Openmax sees raw activations, where supports can saturate, so its
//! default is a plain inverse law. Both are desk-calibrated lookups,
//! monotone non-increasing in `k` and confined to (0, 1); experiment
//! configurations can override them.

use std::f64::consts::E;

/// Default epsilon for thresholded softmax: `0.8 · e/(e + k − 1)`.
pub fn get_softmax_epsilon(k: usize) -> f64 {
    assert!(k >= 1, "need at least one known class");
    0.8 * E / (E + (k - 1) as f64)
}

/// Default epsilon for openmax: `max(0.25, 0.9/k)`.
pub fn get_openmax_epsilon(k: usize) -> f64 {
    assert!(k >= 1, "need at least one known class");
    (0.9 / k as f64).max(0.25)
}
