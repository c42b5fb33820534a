//! Open set recognition evaluation toolkit.
//!
//! The crate bundles everything the experiment runner needs:
//!
//! - [`nn`] — a small deterministic neural-network substrate (tensors,
//!   layers, lower-stack builders, cross-entropy loss, SGD)
//! - [`data`] — MNIST IDX loading into one unified pool, a synthetic blob
//!   generator, and image/label transforms
//! - [`division`] — openness computation, sampling of known/unknown class
//!   configurations (holdout, one-class, and outlier protocols), and
//!   stratified cross-validation fold extraction
//! - [`models`] — the thresholded-softmax and openmax heads with their
//!   train/test loops
//! - [`metrics`] — the four confusion matrices and balanced-accuracy scores
//!
//! All randomness flows through explicitly seeded ChaCha8 streams, so any
//! (configuration, seed) pair reproduces bit-identical results.

pub mod data;
pub mod division;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod tensor;

pub use data::{
    apply_transforms, grayscale_transform, inverse_transform, load_mnist, make_synthetic_blobs,
    onehot_bg, ImageTransform, LabeledDataset,
};
pub use division::{
    configure_division, configure_division_outlier, configure_division_with_weight,
    configure_oneclass_division, fold_indices, get_train_test, get_train_test_outlier, openness,
    DivisionConfig, DivisionList, FoldIndices, WrappedDataset,
};
pub use error::{Error, Result};
pub use metrics::{
    halfpoint_score, inner_score, outer_score, overall_score, ConfusionMatrix, ConfusionSet,
    ScoreAccumulator, ScoreReport,
};
pub use models::{
    fit_weibull_tail, get_openmax_epsilon, get_softmax_epsilon, normalize_activations,
    tsoftmax_predict, weibull_cdf, OpenSetPrediction, Openmax, OpenmaxState, TSoftmax, TrainState,
    WeibullParams,
};
pub use nn::{fc_lower_stack, osrci_lower_stack, LowerStack, Mode};
pub use tensor::Tensor;

pub use rand_chacha::ChaCha8Rng;

/// Seeded RNG constructor used throughout the toolkit.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed for a (configuration, fold, stream)
/// cell of an experiment, via splitmix64 mixing. Stable across platforms.
pub fn derive_stream_seed(seed: u64, config_id: u64, fold: u64, stream: u64) -> u64 {
    let mut state = seed;
    for salt in [config_id.wrapping_add(1), fold.wrapping_add(1), stream.wrapping_add(1)] {
        state = splitmix64(state ^ splitmix64(salt));
    }
    state
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
