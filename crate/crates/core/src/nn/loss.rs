//! Softmax and the mean cross-entropy loss with its analytic gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax of one vector.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over a batch of logits against one-hot targets.
///
/// Returns the scalar loss and its gradient with respect to the logits,
/// `(softmax − target) / B`. The loss is computed as
/// `logsumexp(logits) − ⟨target, logits⟩` per row, which stays finite for
/// arbitrarily large margins.
pub fn cross_entropy_loss(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape() != targets.shape() || logits.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", logits.shape()),
            got: format!("{:?}", targets.shape()),
        });
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("logits"));
    }
    let batch = logits.batch();
    if batch == 0 {
        return Err(Error::InvalidConfig("cross-entropy on an empty batch".into()));
    }
    let k = logits.shape()[1];
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(batch * k);
    for b in 0..batch {
        let z = logits.row(b);
        let t = targets.row(b);
        debug_assert!(
            (t.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "target rows must sum to 1"
        );
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let dot: f64 = z.iter().zip(t).map(|(&a, &b)| a * b).sum();
        total += lse - dot;
        let denom: f64 = z.iter().map(|&v| (v - max).exp()).sum();
        for i in 0..k {
            let p = (z[i] - max).exp() / denom;
            grad.push((p - t[i]) * scale);
        }
    }
    Ok((
        total * scale,
        Tensor::new(vec![batch, k], grad).expect("consistent gradient shape"),
    ))
}
