//! Open set recognition heads and their train/test loops.
//!
//! Both models share one training procedure (cross-entropy + SGD over the
//! known classes) and one evaluation procedure (per-sample open-set and
//! closed-set predictions accumulated into the four confusion matrices);
//! they differ only in how a sample's activation vector becomes an open-set
//! prediction.

mod epsilon;
mod openmax;
mod tsoftmax;
mod weibull;

pub use epsilon::{get_openmax_epsilon, get_softmax_epsilon};
pub use openmax::{Openmax, OpenmaxState};
pub use tsoftmax::TSoftmax;
pub use weibull::{fit_weibull_tail, weibull_cdf, WeibullParams};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::division::WrappedDataset;
use crate::error::{Error, Result};
use crate::metrics::{ScoreAccumulator, ScoreReport};
use crate::nn::{cross_entropy_loss, sgd_step, softmax, Linear, LowerStack, Mode};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 512;

/// One open-set decision: `label` in `0..=k` (`k` meaning unknown) and the
/// probability vector it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetPrediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Scale a vector to unit L2 norm (norm floored at 1e-12).
pub fn normalize_activations(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| x / norm).collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Thresholded-softmax decision rule: softmax over the L2-normalized
/// activations; the sample is unknown when the leading probability falls
/// below `epsilon`.
pub fn tsoftmax_predict(logits: &[f64], epsilon: f64) -> OpenSetPrediction {
    let p = softmax(&normalize_activations(logits));
    let best = argmax(&p);
    let label = if p[best] >= epsilon { best } else { p.len() };
    OpenSetPrediction {
        label,
        probabilities: p,
    }
}

/// Per-run training state: hyperparameters plus the RNG stream that drives
/// epoch shuffles.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(learning_rate: f64, batch_size: usize, seed: u64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be ≥ 1".into()));
        }
        Ok(Self {
            learning_rate,
            batch_size,
            seed,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Shuffle sample indices once and split into batches; the last partial
    /// batch is kept.
    fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }
}

fn check_train_labels(data: &WrappedDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    if data.onehot_width() != data.k() {
        return Err(Error::InvalidConfig(format!(
            "training data encodes {} columns for {} known classes; unknown \
             samples are not allowed during training",
            data.onehot_width(),
            data.k()
        )));
    }
    Ok(())
}

/// One epoch of forward/backward/SGD over shuffled batches. Returns the
/// sample-weighted mean loss.
pub(crate) fn train_pass(
    lower: &mut LowerStack,
    head: &mut Linear,
    data: &WrappedDataset,
    state: &mut TrainState,
) -> Result<f64> {
    check_train_labels(data)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for batch in state.epoch_batches(data.len()) {
        let (x, t) = data.gather(&batch);
        let features = lower.forward(&x, Mode::Train)?;
        let logits = head.forward(&features, Mode::Train)?;
        let (loss, grad_logits) = cross_entropy_loss(&logits, &t)?;
        let grad_features = head.backward(&grad_logits);
        lower.backward(&grad_features);
        let params = lower.params_mut().into_iter().chain(head.params_mut());
        sgd_step(params, state.learning_rate);
        total += loss * batch.len() as f64;
        count += batch.len();
    }
    state.epoch += 1;
    Ok(total / count as f64)
}

/// Eval-mode activation vectors for a whole dataset, in fixed-size batches.
pub(crate) fn eval_activations(
    lower: &mut LowerStack,
    head: &mut Linear,
    images: &Tensor,
) -> Result<Tensor> {
    let n = images.batch();
    let k = head.out_features();
    let mut out = Vec::with_capacity(n * k);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = images.gather_rows(&idx);
        let features = lower.forward(&x, Mode::Eval)?;
        let logits = head.forward(&features, Mode::Eval)?;
        out.extend_from_slice(logits.data());
        start = end;
    }
    Tensor::new(vec![n, k], out)
}

/// Shared evaluation loop: per sample, an open-set prediction from
/// `predict` and the closed-set argmax over the known-class activations.
pub(crate) fn test_pass(
    lower: &mut LowerStack,
    head: &mut Linear,
    data: &WrappedDataset,
    conf: bool,
    predict: impl Fn(&[f64]) -> Result<OpenSetPrediction>,
) -> Result<ScoreReport> {
    let k = head.out_features();
    if data.k() != k {
        return Err(Error::InvalidConfig(format!(
            "test data has {} known classes, model has {}",
            data.k(),
            k
        )));
    }
    let activations = eval_activations(lower, head, data.images())?;
    let mut acc = ScoreAccumulator::new(k);
    for (i, &truth) in data.labels().iter().enumerate() {
        let v = activations.row(i);
        let open = predict(v)?;
        let closed = argmax(v);
        acc.push(truth, open.label, closed)?;
    }
    acc.report(conf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_scales_to_unit_norm() {
        let v = normalize_activations(&[3.0, 4.0]);
        assert!((v[0] - 0.6).abs() < 1e-12);
        assert!((v[1] - 0.8).abs() < 1e-12);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_preserves_argmax() {
        let v = [0.2, -4.0, 7.5, 7.4];
        assert_eq!(argmax(&normalize_activations(&v)), argmax(&v));
    }

    #[test]
    fn tsoftmax_uniform_logits_fall_below_threshold() {
        let p = tsoftmax_predict(&[0.0, 0.0], 0.6);
        assert_eq!(p.label, 2);
        assert!((p.probabilities[0] - 0.5).abs() < 1e-12);
        assert!((p.probabilities[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tsoftmax_dominant_logit_is_accepted() {
        // normalize([10, 0]) = [1, 0]; softmax gives e/(e+1) ≈ 0.731
        let p = tsoftmax_predict(&[10.0, 0.0], 0.6);
        assert_eq!(p.label, 0);
        let expected = std::f64::consts::E / (std::f64::consts::E + 1.0);
        assert!((p.probabilities[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn tsoftmax_zero_epsilon_never_rejects() {
        let mut rng = crate::rng_from_seed(5);
        for _ in 0..200 {
            let v: Vec<f64> = (0..4).map(|_| rand::Rng::random::<f64>(&mut rng) * 8.0 - 4.0).collect();
            let p = tsoftmax_predict(&v, 0.0);
            assert_eq!(p.label, argmax(&v));
        }
    }

    #[test]
    fn rejection_is_monotone_in_epsilon() {
        let mut rng = crate::rng_from_seed(6);
        for _ in 0..200 {
            let v: Vec<f64> = (0..5).map(|_| rand::Rng::random::<f64>(&mut rng) * 4.0 - 2.0).collect();
            let mut was_unknown = false;
            for eps in [0.0, 0.2, 0.4, 0.6, 0.8, 0.999] {
                let unknown = tsoftmax_predict(&v, eps).label == 5;
                assert!(
                    unknown || !was_unknown,
                    "raising epsilon flipped unknown back to known"
                );
                was_unknown = unknown;
            }
        }
    }

    #[test]
    fn train_state_validates_hyperparameters() {
        assert!(TrainState::new(0.0, 4, 0).is_err());
        assert!(TrainState::new(-1.0, 4, 0).is_err());
        assert!(TrainState::new(0.1, 0, 0).is_err());
        assert!(TrainState::new(0.1, 4, 0).is_ok());
    }

    #[test]
    fn epoch_batches_cover_everything_and_keep_partial_tail() {
        let mut state = TrainState::new(0.1, 4, 3).unwrap();
        let batches = state.epoch_batches(10);
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2].len(), 2);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
