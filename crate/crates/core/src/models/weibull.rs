//! Two-parameter Weibull tail fitting by maximum likelihood.
//!
//! The shape parameter κ solves the profile-likelihood equation
//!
//! ```text
//! f(κ) = n/κ + Σ ln tᵢ − n · Σ tᵢ^κ ln tᵢ / Σ tᵢ^κ = 0
//! ```
//!
//! via Newton iteration; the scale λ then follows in closed form as
//! `(Σ tᵢ^κ / n)^(1/κ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 200;
const SHAPE_TOLERANCE: f64 = 1e-8;

/// Fitted Weibull parameters: shape κ and scale λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullParams {
    pub shape: f64,
    pub scale: f64,
}

/// CDF of the Weibull distribution: `1 − exp(−(x/λ)^κ)` for x > 0, else 0.
pub fn weibull_cdf(x: f64, shape: f64, scale: f64) -> f64 {
    debug_assert!(shape > 0.0 && scale > 0.0);
    if x <= 0.0 {
        0.0
    } else {
        1.0 - (-(x / scale).powf(shape)).exp()
    }
}

/// Fit a Weibull distribution to the `tail` largest of the given distances.
///
/// Values are scale-normalized internally, so the iteration is insensitive
/// to the magnitude of the distances. All tail values equal is a degenerate
/// input and an error, as is any non-positive tail value.
pub fn fit_weibull_tail(distances: &[f64], tail: usize) -> Result<WeibullParams> {
    if tail == 0 {
        return Err(Error::InvalidConfig("tail must be ≥ 1".into()));
    }
    if distances.len() < tail {
        return Err(Error::WeibullFit(format!(
            "need at least {} distances, got {}",
            tail,
            distances.len()
        )));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let tail_values = &sorted[sorted.len() - tail..];

    if tail_values[0] == tail_values[tail - 1] {
        return Err(Error::DegenerateTail);
    }
    if tail_values[0] <= 0.0 || !tail_values[tail - 1].is_finite() {
        return Err(Error::WeibullFit(
            "tail distances must be positive and finite".into(),
        ));
    }

    // Normalize by the maximum; the shape is scale-invariant and the scale
    // is recovered by multiplying back.
    let max = tail_values[tail - 1];
    let t: Vec<f64> = tail_values.iter().map(|&v| v / max).collect();
    let ln_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let n = tail as f64;
    let sum_ln: f64 = ln_t.iter().sum();

    // Moment-based starting point: κ ≈ (π/√6) / std(ln t).
    let mean_ln = sum_ln / n;
    let var_ln = ln_t.iter().map(|l| (l - mean_ln).powi(2)).sum::<f64>() / n;
    let mut shape = if var_ln > 0.0 {
        (std::f64::consts::PI / 6f64.sqrt()) / var_ln.sqrt()
    } else {
        1.0
    };

    let mut converged = false;
    for _ in 0..MAX_ITERATIONS {
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        for (v, l) in t.iter().zip(&ln_t) {
            let p = v.powf(shape);
            s0 += p;
            s1 += p * l;
            s2 += p * l * l;
        }
        let f = n / shape + sum_ln - n * s1 / s0;
        let f_prime = -n / (shape * shape) - n * (s2 * s0 - s1 * s1) / (s0 * s0);
        if f_prime.abs() < 1e-300 {
            return Err(Error::WeibullFit("flat likelihood derivative".into()));
        }
        let delta = f / f_prime;
        shape -= delta;
        if shape <= 0.0 {
            shape = (shape + delta) / 2.0; // backtrack halfway instead
        }
        if delta.abs() < SHAPE_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::WeibullFit(format!(
            "no convergence after {} iterations",
            MAX_ITERATIONS
        )));
    }

    let s0: f64 = t.iter().map(|v| v.powf(shape)).sum();
    let scale = (s0 / n).powf(1.0 / shape) * max;
    if !shape.is_finite() || shape <= 0.0 || !scale.is_finite() || scale <= 0.0 {
        return Err(Error::WeibullFit("fit produced invalid parameters".into()));
    }
    Ok(WeibullParams { shape, scale })
}
