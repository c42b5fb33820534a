//! Thresholded softmax: the baseline open-set head.

use rand_chacha::ChaCha8Rng;

use super::{test_pass, train_pass, tsoftmax_predict, OpenSetPrediction, TrainState};
use crate::division::WrappedDataset;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::nn::{Linear, LowerStack, ParamMut};
use crate::tensor::Tensor;

/// Lower stack plus one fully connected layer to `k` outputs; samples whose
/// leading normalized-softmax probability falls below `epsilon` are
/// recognized as unknown.
#[derive(Debug, Clone)]
pub struct TSoftmax {
    lower: LowerStack,
    head: Linear,
    k: usize,
    epsilon: f64,
}

impl TSoftmax {
    pub fn new(
        lower: LowerStack,
        n_known: usize,
        epsilon: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if n_known < 1 {
            return Err(Error::InvalidConfig("n_known must be ≥ 1".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0, 1), got {}",
                epsilon
            )));
        }
        let head = Linear::new(lower.n_out_channels(), n_known, rng);
        Ok(Self {
            lower,
            head,
            k: n_known,
            epsilon,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut params = self.lower.params_mut();
        params.extend(self.head.params_mut());
        params
    }

    /// Eval-mode activation vectors for a batch of images.
    pub fn activations(&mut self, images: &Tensor) -> Result<Tensor> {
        super::eval_activations(&mut self.lower, &mut self.head, images)
    }

    /// Open-set decision for one activation vector.
    pub fn predict_activation(&self, v: &[f64]) -> OpenSetPrediction {
        tsoftmax_predict(v, self.epsilon)
    }

    /// One pass of forward/backward/SGD over shuffled batches; returns the
    /// mean training loss.
    pub fn train_epoch(&mut self, data: &WrappedDataset, state: &mut TrainState) -> Result<f64> {
        train_pass(&mut self.lower, &mut self.head, data, state)
    }

    /// Score the test set; `conf` additionally returns the four confusion
    /// matrices.
    pub fn test_epoch(&mut self, data: &WrappedDataset, conf: bool) -> Result<ScoreReport> {
        let epsilon = self.epsilon;
        test_pass(&mut self.lower, &mut self.head, data, conf, |v| {
            Ok(tsoftmax_predict(v, epsilon))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blobs;
    use crate::division::get_train_test;
    use crate::nn::fc_lower_stack;
    use crate::rng_from_seed;

    fn small_model(seed: u64) -> (TSoftmax, TrainState) {
        let mut rng = rng_from_seed(seed);
        let lower = fc_lower_stack(1, 6, 16, &mut rng).unwrap();
        let model = TSoftmax::new(lower, 2, 0.55, &mut rng).unwrap();
        let state = TrainState::new(0.05, 8, seed).unwrap();
        (model, state)
    }

    fn small_data() -> (crate::division::WrappedDataset, crate::division::WrappedDataset) {
        let ds = make_synthetic_blobs(3, 40, 1, 6, 11);
        get_train_test(&ds, &[0, 1], &[2], false, 0, 4, 11).unwrap()
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let (mut model, mut state) = small_model(1);
        let (train, _) = small_data();
        let first = model.train_epoch(&train, &mut state).unwrap();
        let mut last = first;
        for _ in 0..9 {
            last = model.train_epoch(&train, &mut state).unwrap();
        }
        assert!(
            last < first,
            "loss did not decrease: first {:.4}, last {:.4}",
            first,
            last
        );
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (mut a, mut sa) = small_model(9);
        let (mut b, mut sb) = small_model(9);
        let (train, test) = small_data();
        for _ in 0..3 {
            let la = a.train_epoch(&train, &mut sa).unwrap();
            let lb = b.train_epoch(&train, &mut sb).unwrap();
            assert_eq!(la, lb);
        }
        let ra = a.test_epoch(&test, false).unwrap();
        let rb = b.test_epoch(&test, false).unwrap();
        assert_eq!(ra.inner, rb.inner);
        assert_eq!(ra.outer, rb.outer);
        assert_eq!(ra.halfpoint, rb.halfpoint);
        assert_eq!(ra.overall, rb.overall);
    }

    #[test]
    fn training_rejects_unknown_labels() {
        let (mut model, mut state) = small_model(2);
        let (_, test) = small_data();
        // the test side carries the k+1 column and must be refused
        assert!(model.train_epoch(&test, &mut state).is_err());
    }

    #[test]
    fn constructor_validates_epsilon() {
        let mut rng = rng_from_seed(3);
        let lower = fc_lower_stack(1, 4, 4, &mut rng).unwrap();
        assert!(TSoftmax::new(lower.clone(), 2, 0.0, &mut rng).is_err());
        assert!(TSoftmax::new(lower.clone(), 2, 1.0, &mut rng).is_err());
        assert!(TSoftmax::new(lower, 2, 0.5, &mut rng).is_ok());
    }

    #[test]
    fn test_epoch_returns_matrices_only_when_asked() {
        let (mut model, mut state) = small_model(4);
        let (train, test) = small_data();
        model.train_epoch(&train, &mut state).unwrap();
        let without = model.test_epoch(&test, false).unwrap();
        assert!(without.matrices.is_none());
        let with = model.test_epoch(&test, true).unwrap();
        let set = with.matrices.expect("requested matrices");
        assert_eq!(set.inner.total() + set.overall.row_sum(2), set.overall.total());
    }
}
