//! Openmax: extreme-value recalibration of the activation vector with a
//! synthetic pseudo-activation for the unknown class.
//!
//! Fitting computes per-class Mean Activation Vectors over the correctly
//! classified training samples and fits a Weibull distribution to the tail
//! of the Euclidean distances from each MAV. At test time the `alpha`
//! highest activations are damped by rank-weighted Weibull CDF values of
//! their distance to the class MAV; the removed mass becomes the
//! pseudo-activation of the unknown class.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, test_pass, train_pass, OpenSetPrediction, TrainState};
use super::weibull::{fit_weibull_tail, weibull_cdf, WeibullParams};
use crate::division::WrappedDataset;
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::nn::{softmax, Linear, LowerStack, ParamMut};
use crate::tensor::Tensor;

/// Fitted per-class state: MAVs and Weibull tail parameters, together with
/// the hyperparameters they were fitted under. Serializes to JSON for
/// fit-once / score-many workflows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenmaxState {
    pub epsilon: f64,
    pub tail: usize,
    pub alpha: usize,
    pub mavs: Vec<Vec<f64>>,
    pub weibulls: Vec<WeibullParams>,
}

impl OpenmaxState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

#[derive(Debug, Clone)]
pub struct Openmax {
    lower: LowerStack,
    head: Linear,
    k: usize,
    epsilon: f64,
    tail: usize,
    alpha: usize,
    fitted: Option<(Vec<Vec<f64>>, Vec<WeibullParams>)>,
}

impl Openmax {
    pub fn new(
        lower: LowerStack,
        n_known: usize,
        epsilon: f64,
        tail: usize,
        alpha: usize,
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
        if tail < 1 {
            return Err(Error::InvalidConfig("tail must be ≥ 1".into()));
        }
        if alpha < 1 || alpha > n_known {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in 1..={}, got {}",
                n_known, alpha
            )));
        }
        let head = Linear::new(lower.n_out_channels(), n_known, rng);
        Ok(Self {
            lower,
            head,
            k: n_known,
            epsilon,
            tail,
            alpha,
            fitted: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
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

    /// Fit MAVs and Weibull tails from the training set: per class, the
    /// mean activation vector of the correctly classified samples and a
    /// Weibull fit over the tail of distances to it.
    pub fn fit(&mut self, data: &WrappedDataset) -> Result<()> {
        let activations = self.activations(data.images())?;
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); self.k];
        for (i, &label) in data.labels().iter().enumerate() {
            if label >= self.k {
                return Err(Error::InvalidConfig(
                    "openmax fit requires known-class samples only".into(),
                ));
            }
            if argmax(activations.row(i)) == label {
                per_class[label].push(i);
            }
        }
        let mut mavs = Vec::with_capacity(self.k);
        let mut weibulls = Vec::with_capacity(self.k);
        for (class, correct) in per_class.iter().enumerate() {
            if correct.len() < self.tail {
                return Err(Error::OpenmaxFit {
                    class,
                    reason: format!(
                        "{} correctly classified samples, need at least tail = {}",
                        correct.len(),
                        self.tail
                    ),
                });
            }
            let mut mav = vec![0.0; self.k];
            for &i in correct {
                for (m, &v) in mav.iter_mut().zip(activations.row(i)) {
                    *m += v;
                }
            }
            for m in &mut mav {
                *m /= correct.len() as f64;
            }
            let distances: Vec<f64> = correct
                .iter()
                .map(|&i| euclidean(activations.row(i), &mav))
                .collect();
            let params = fit_weibull_tail(&distances, self.tail).map_err(|e| Error::OpenmaxFit {
                class,
                reason: e.to_string(),
            })?;
            mavs.push(mav);
            weibulls.push(params);
        }
        self.fitted = Some((mavs, weibulls));
        Ok(())
    }

    /// Rank-weighted recalibration of one activation vector into `k + 1`
    /// entries. The sum over all entries equals the sum of the input
    /// exactly: mass removed from the top-ranked classes reappears as the
    /// pseudo-activation.
    pub fn recalibrate(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (mavs, weibulls) = self.fitted.as_ref().ok_or(Error::NotFitted)?;
        Ok(recalibrate_with(v, mavs, weibulls, self.alpha))
    }

    /// Open-set decision for one activation vector: softmax over the
    /// recalibrated `k + 1` entries; unknown wins when the pseudo-activation
    /// dominates or the best known-class support falls below `epsilon`.
    pub fn predict_activation(&self, v: &[f64]) -> Result<OpenSetPrediction> {
        let (mavs, weibulls) = self.fitted.as_ref().ok_or(Error::NotFitted)?;
        Ok(predict_with(v, mavs, weibulls, self.alpha, self.epsilon, self.k))
    }

    /// One SGD pass over shuffled batches followed by a refit of the MAV
    /// and Weibull state on the full training set.
    pub fn train_epoch(&mut self, data: &WrappedDataset, state: &mut TrainState) -> Result<f64> {
        let loss = train_pass(&mut self.lower, &mut self.head, data, state)?;
        self.fit(data)?;
        Ok(loss)
    }

    /// Score the test set; requires a fitted head.
    pub fn test_epoch(&mut self, data: &WrappedDataset, conf: bool) -> Result<ScoreReport> {
        let (mavs, weibulls) = self.fitted.clone().ok_or(Error::NotFitted)?;
        let (alpha, epsilon, k) = (self.alpha, self.epsilon, self.k);
        test_pass(&mut self.lower, &mut self.head, data, conf, move |v| {
            Ok(predict_with(v, &mavs, &weibulls, alpha, epsilon, k))
        })
    }

    /// Snapshot of the fitted state plus hyperparameters.
    pub fn export_state(&self) -> Result<OpenmaxState> {
        let (mavs, weibulls) = self.fitted.as_ref().ok_or(Error::NotFitted)?;
        Ok(OpenmaxState {
            epsilon: self.epsilon,
            tail: self.tail,
            alpha: self.alpha,
            mavs: mavs.clone(),
            weibulls: weibulls.clone(),
        })
    }

    /// Restore fitted state exported earlier (or constructed externally).
    pub fn import_state(&mut self, state: OpenmaxState) -> Result<()> {
        if state.mavs.len() != self.k || state.weibulls.len() != self.k {
            return Err(Error::InvalidConfig(format!(
                "state describes {} classes, model has {}",
                state.mavs.len(),
                self.k
            )));
        }
        if state.mavs.iter().any(|m| m.len() != self.k) {
            return Err(Error::InvalidConfig(
                "MAV width must equal the known-class count".into(),
            ));
        }
        if state.alpha < 1 || state.alpha > self.k {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in 1..={}, got {}",
                self.k, state.alpha
            )));
        }
        self.epsilon = state.epsilon;
        self.tail = state.tail;
        self.alpha = state.alpha;
        self.fitted = Some((state.mavs, state.weibulls));
        Ok(())
    }
}

fn recalibrate_with(
    v: &[f64],
    mavs: &[Vec<f64>],
    weibulls: &[WeibullParams],
    alpha: usize,
) -> Vec<f64> {
    let k = mavs.len();
    assert_eq!(v.len(), k, "activation vector width");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        v[b].partial_cmp(&v[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut omega = vec![1.0; k];
    for r in 1..=alpha {
        let class = order[r - 1];
        let distance = euclidean(v, &mavs[class]);
        let rank_weight = (alpha - r + 1) as f64 / alpha as f64;
        let cdf = weibull_cdf(distance, weibulls[class].shape, weibulls[class].scale);
        omega[class] = 1.0 - rank_weight * cdf;
    }

    let mut recalibrated = Vec::with_capacity(k + 1);
    let mut pseudo = 0.0;
    for (c, &x) in v.iter().enumerate() {
        recalibrated.push(x * omega[c]);
        pseudo += x * (1.0 - omega[c]);
    }
    recalibrated.push(pseudo);
    recalibrated
}

fn predict_with(
    v: &[f64],
    mavs: &[Vec<f64>],
    weibulls: &[WeibullParams],
    alpha: usize,
    epsilon: f64,
    k: usize,
) -> OpenSetPrediction {
    let recalibrated = recalibrate_with(v, mavs, weibulls, alpha);
    let p = softmax(&recalibrated);
    let best_known = argmax(&p[..k]);
    let label = if argmax(&p) == k || p[best_known] < epsilon {
        k
    } else {
        best_known
    };
    OpenSetPrediction {
        label,
        probabilities: p,
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_synthetic_blobs;
    use crate::division::get_train_test;
    use crate::nn::fc_lower_stack;
    use crate::rng_from_seed;
    use rand::Rng;

    fn fitted_probe_head(mavs: Vec<Vec<f64>>, weibulls: Vec<WeibullParams>, alpha: usize) -> Openmax {
        let k = mavs.len();
        let mut rng = rng_from_seed(17);
        let lower = fc_lower_stack(1, 2, 4, &mut rng).unwrap();
        let mut model = Openmax::new(lower, k, 0.25, 5, alpha, &mut rng).unwrap();
        model
            .import_state(OpenmaxState {
                epsilon: 0.25,
                tail: 5,
                alpha,
                mavs,
                weibulls,
            })
            .unwrap();
        model
    }

    #[test]
    fn recalibration_identity_when_cdf_is_zero() {
        // probe exactly at each MAV: distance 0 → CDF 0 → ω = 1 everywhere
        let model = fitted_probe_head(
            vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            vec![
                WeibullParams { shape: 2.0, scale: 1.0 },
                WeibullParams { shape: 2.0, scale: 1.0 },
            ],
            2,
        );
        let v = vec![2.0, 0.0];
        let recalibrated = model.recalibrate(&v).unwrap();
        assert_eq!(recalibrated, vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn recalibration_conserves_total_activation() {
        let mut rng = rng_from_seed(8);
        let k = 3;
        let model = fitted_probe_head(
            (0..k)
                .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
                .collect(),
            (0..k)
                .map(|_| WeibullParams {
                    shape: 0.5 + rng.random::<f64>() * 3.0,
                    scale: 0.2 + rng.random::<f64>(),
                })
                .collect(),
            2,
        );
        for _ in 0..500 {
            let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 5.0).collect();
            let r = model.recalibrate(&v).unwrap();
            let sum_in: f64 = v.iter().sum();
            let sum_out: f64 = r.iter().sum();
            assert!(
                (sum_in - sum_out).abs() <= 1e-9 * sum_in.abs().max(1.0),
                "conservation violated: {} vs {}",
                sum_in,
                sum_out
            );
        }
    }

    #[test]
    fn alpha_one_damps_only_the_top_class() {
        let model = fitted_probe_head(
            vec![
                vec![5.0, 0.0, 0.0],
                vec![0.0, 5.0, 0.0],
                vec![0.0, 0.0, 5.0],
            ],
            vec![
                WeibullParams { shape: 2.0, scale: 1.0 },
                WeibullParams { shape: 2.0, scale: 1.0 },
                WeibullParams { shape: 2.0, scale: 1.0 },
            ],
            1,
        );
        // top class is 1; its distance to mav_1 = ‖(1,3,2)−(0,5,0)‖ = 3
        let v = vec![1.0, 3.0, 2.0];
        let recalibrated = model.recalibrate(&v).unwrap();
        let cdf = weibull_cdf(euclidean(&v, &[0.0, 5.0, 0.0]), 2.0, 1.0);
        let expected_top = 3.0 * (1.0 - cdf);
        assert!((recalibrated[1] - expected_top).abs() < 1e-12);
        assert_eq!(recalibrated[0], 1.0);
        assert_eq!(recalibrated[2], 2.0);
        assert!((recalibrated[3] - 3.0 * cdf).abs() < 1e-12);
    }

    #[test]
    fn unfitted_head_refuses_to_predict() {
        let mut rng = rng_from_seed(4);
        let lower = fc_lower_stack(1, 2, 4, &mut rng).unwrap();
        let model = Openmax::new(lower, 2, 0.3, 5, 1, &mut rng).unwrap();
        assert!(matches!(model.recalibrate(&[1.0, 0.0]), Err(Error::NotFitted)));
        assert!(matches!(
            model.predict_activation(&[1.0, 0.0]),
            Err(Error::NotFitted)
        ));
    }

    #[test]
    fn far_probe_is_recognized_as_unknown() {
        let model = fitted_probe_head(
            vec![vec![3.0, 0.0], vec![0.0, 3.0]],
            vec![
                WeibullParams { shape: 2.0, scale: 0.5 },
                WeibullParams { shape: 2.0, scale: 0.5 },
            ],
            2,
        );
        // distance to the nearest MAV far exceeds 3·λ, so the CDF saturates
        let p = model.predict_activation(&[10.0, 1.0]).unwrap();
        assert_eq!(p.label, 2);
        assert_eq!(p.probabilities.len(), 3);
    }

    #[test]
    fn epsilon_rule_disabled_keeps_closed_set_argmax() {
        let model = fitted_probe_head(
            vec![vec![3.0, 0.0], vec![0.0, 3.0]],
            vec![
                WeibullParams { shape: 2.0, scale: 50.0 },
                WeibullParams { shape: 2.0, scale: 50.0 },
            ],
            1,
        );
        // huge scale → CDF ≈ 0 → pseudo-activation ≈ 0; tiny epsilon cannot
        // trigger rejection either
        let mut weak = model.clone();
        weak.import_state(OpenmaxState {
            epsilon: 1e-9,
            ..model.export_state().unwrap()
        })
        .unwrap();
        let p = weak.predict_activation(&[2.9, 0.1]).unwrap();
        assert_eq!(p.label, 0);
    }

    #[test]
    fn damping_never_raises_nonnegative_activations() {
        let mut rng = rng_from_seed(12);
        let k = 4;
        let model = fitted_probe_head(
            (0..k)
                .map(|_| (0..k).map(|_| rng.random::<f64>() * 2.0).collect())
                .collect(),
            (0..k)
                .map(|_| WeibullParams {
                    shape: 0.4 + rng.random::<f64>() * 4.0,
                    scale: 0.1 + rng.random::<f64>() * 2.0,
                })
                .collect(),
            3,
        );
        for _ in 0..500 {
            let v: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 6.0).collect();
            let r = model.recalibrate(&v).unwrap();
            for c in 0..k {
                assert!(r[c] <= v[c], "damping raised activation {}: {} > {}", c, r[c], v[c]);
            }
            assert!(r[k] >= 0.0, "pseudo-activation went negative");
        }
    }

    #[test]
    fn fit_on_clustered_activations_recovers_cluster_means() {
        // synthetic blobs let the trained head separate classes cleanly, so
        // the MAV must sit near each cluster's activation mean
        let ds = make_synthetic_blobs(2, 60, 1, 6, 5);
        let (train, _) = get_train_test(&ds, &[0, 1], &[], false, 0, 3, 5).unwrap();
        let mut rng = rng_from_seed(5);
        let lower = fc_lower_stack(1, 6, 12, &mut rng).unwrap();
        let mut model = Openmax::new(lower, 2, 0.3, 10, 2, &mut rng).unwrap();
        let mut state = TrainState::new(0.05, 8, 5).unwrap();
        for _ in 0..10 {
            model.train_epoch(&train, &mut state).unwrap();
        }
        let state = model.export_state().unwrap();
        let activations = model.activations(train.images()).unwrap();
        for class in 0..2 {
            let rows: Vec<&[f64]> = train
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == class)
                .map(|(i, _)| activations.row(i))
                .collect();
            let mut mean = vec![0.0; 2];
            for r in &rows {
                for (m, &v) in mean.iter_mut().zip(*r) {
                    *m += v / rows.len() as f64;
                }
            }
            // the MAV is a mean over the correctly classified subset, which
            // after training is nearly every sample
            let d = euclidean(&mean, &state.mavs[class]);
            assert!(d < 0.5, "class {} MAV {:?} far from mean {:?}", class, state.mavs[class], mean);
        }
    }

    #[test]
    fn single_correct_sample_per_class_degenerates() {
        use crate::nn::{Flatten, Layer, LowerStack};
        use crate::tensor::Tensor;

        // identity head over one sample per class guarantees correct
        // classification; the single zero distance makes the tail degenerate
        let images = Tensor::new(vec![2, 1, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let train = WrappedDataset::new(images, vec![0, 1], 2, false).unwrap();
        let lower = LowerStack::new(vec![Layer::Flatten(Flatten::new())], 2);
        let mut rng = rng_from_seed(6);
        let mut model = Openmax::new(lower, 2, 0.3, 1, 1, &mut rng).unwrap();
        {
            let mut params = model.params_mut();
            params[0]
                .value
                .data_mut()
                .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
            params[1].value.data_mut().copy_from_slice(&[0.0, 0.0]);
        }
        let err = model.fit(&train).unwrap_err();
        match err {
            Error::OpenmaxFit { reason, .. } => {
                assert!(reason.contains("equal"), "{}", reason)
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn class_with_too_few_correct_samples_is_named() {
        let ds = make_synthetic_blobs(2, 30, 1, 4, 13);
        let (train, _) = get_train_test(&ds, &[0, 1], &[], false, 0, 3, 13).unwrap();
        let mut rng = rng_from_seed(7);
        let lower = fc_lower_stack(1, 4, 8, &mut rng).unwrap();
        // tail larger than any class's sample count
        let mut model = Openmax::new(lower, 2, 0.3, 10_000, 1, &mut rng).unwrap();
        let err = model.fit(&train).unwrap_err();
        assert!(matches!(err, Error::OpenmaxFit { .. }));
    }

    #[test]
    fn state_round_trips_through_json() {
        let ds = make_synthetic_blobs(2, 80, 1, 5, 19);
        let (train, _) = get_train_test(&ds, &[0, 1], &[], false, 0, 3, 19).unwrap();
        let mut rng = rng_from_seed(19);
        let lower = fc_lower_stack(1, 5, 8, &mut rng).unwrap();
        let mut model = Openmax::new(lower, 2, 0.45, 5, 2, &mut rng).unwrap();
        let mut state = TrainState::new(0.05, 8, 19).unwrap();
        for _ in 0..5 {
            model.train_epoch(&train, &mut state).unwrap();
        }
        let exported = model.export_state().unwrap();
        let json = exported.to_json().unwrap();
        let restored = OpenmaxState::from_json(&json).unwrap();
        assert_eq!(restored, exported);

        // a fresh head with imported state recalibrates identically
        let mut other = model.clone();
        other.fitted = None;
        other.import_state(restored).unwrap();
        let probe = vec![0.7, 0.1];
        assert_eq!(
            model.recalibrate(&probe).unwrap(),
            other.recalibrate(&probe).unwrap()
        );
    }

    #[test]
    fn seeded_openmax_training_is_deterministic() {
        let ds = make_synthetic_blobs(2, 80, 1, 5, 23);
        let (train, test) = get_train_test(&ds, &[0, 1], &[], false, 0, 3, 23).unwrap();
        let build = || {
            let mut rng = rng_from_seed(23);
            let lower = fc_lower_stack(1, 5, 8, &mut rng).unwrap();
            (
                Openmax::new(lower, 2, 0.45, 5, 2, &mut rng).unwrap(),
                TrainState::new(0.05, 8, 23).unwrap(),
            )
        };
        let (mut a, mut sa) = build();
        let (mut b, mut sb) = build();
        for _ in 0..3 {
            assert_eq!(
                a.train_epoch(&train, &mut sa).unwrap(),
                b.train_epoch(&train, &mut sb).unwrap()
            );
        }
        let ra = a.test_epoch(&test, false).unwrap();
        let rb = b.test_epoch(&test, false).unwrap();
        assert_eq!(ra.overall, rb.overall);
    }
}
