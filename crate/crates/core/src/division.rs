//! Division of a base dataset into open-set experimental configurations.
//!
//! A configuration assigns some classes to the known set (re-indexed to
//! `0..k-1`) and some to the unknown set (all mapped to the common label
//! `k`). Configurations are drawn by first sampling (known, unknown) size
//! pairs — larger totals are proportionally more likely — and then sampling
//! class assignments uniformly without replacement.
//!
//! Fold extraction runs a seeded stratified 10%/90% split (the 10% side is
//! reserved for hyperparameter tuning), partitions the kept side into
//! stratified folds, and removes every unknown-class sample from the train
//! part.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{apply_transforms, onehot_bg, ImageTransform, LabeledDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TUNING_SLOTS: usize = 10; // every 10th sample per class forms the 10% side

/// Openness of a problem with `n_kkc` training classes and `n_kkc + n_uuc`
/// testing classes: `1 − sqrt(2·n_kkc / (2·n_kkc + n_uuc))`.
pub fn openness(n_kkc: usize, n_uuc: usize) -> f64 {
    let k = n_kkc as f64;
    let u = n_uuc as f64;
    1.0 - (2.0 * k / (2.0 * k + u)).sqrt()
}

/// One experimental configuration: known classes, unknown classes, and the
/// openness implied by their sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionConfig {
    pub kkc: Vec<usize>,
    pub uuc: Vec<usize>,
    pub openness: f64,
}

/// On-disk form of a generated division: the seed it was drawn with and the
/// configuration list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivisionList {
    pub seed: u64,
    pub configs: Vec<DivisionConfig>,
}

/// Draw `n` distinct items from `pairs` with probability proportional to
/// `weight`, without replacement.
pub fn sample_weighted_pairs(
    pairs: &[(usize, usize)],
    weight: impl Fn(usize, usize) -> f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    if n > pairs.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {} distinct size pairs from {} candidates",
            n,
            pairs.len()
        )));
    }
    let mut remaining: Vec<(usize, usize)> = pairs.to_vec();
    let mut weights: Vec<f64> = remaining.iter().map(|&(k, u)| weight(k, u)).collect();
    if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
        return Err(Error::InvalidConfig(
            "pair weights must be positive and finite".into(),
        ));
    }
    let mut drawn = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = weights.iter().sum();
        let mut target = rand::Rng::random::<f64>(rng) * total;
        let mut pick = remaining.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            if target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        drawn.push(remaining.swap_remove(pick));
        weights.swap_remove(pick);
    }
    Ok(drawn)
}

fn linear_weight(n_kkc: usize, n_uuc: usize) -> f64 {
    (n_kkc + n_uuc) as f64
}

fn draw_assignment(
    class_count: usize,
    n_kkc: usize,
    n_uuc: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..class_count).collect();
    ids.shuffle(rng);
    let kkc = ids[..n_kkc].to_vec();
    let uuc = ids[n_kkc..n_kkc + n_uuc].to_vec();
    (kkc, uuc)
}

fn build_configs(
    pairs: &[(usize, usize)],
    repeats: usize,
    class_count: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<DivisionConfig>, Vec<f64>) {
    let mut configs = Vec::with_capacity(pairs.len() * repeats);
    let mut openness_values = Vec::with_capacity(pairs.len());
    for &(n_kkc, n_uuc) in pairs {
        openness_values.push(openness(n_kkc, n_uuc));
        for _ in 0..repeats {
            let (kkc, uuc) = draw_assignment(class_count, n_kkc, n_uuc, rng);
            configs.push(DivisionConfig {
                kkc,
                uuc,
                openness: openness(n_kkc, n_uuc),
            });
        }
    }
    (configs, openness_values)
}

/// Generate holdout-protocol configurations: `n_openness` size pairs with
/// at least two known and one unknown class, `repeats` class assignments
/// per pair. Returns the configurations grouped by size pair and the
/// openness value of each pair.
pub fn configure_division(
    dataset: &LabeledDataset,
    n_openness: usize,
    repeats: usize,
    seed: u64,
) -> Result<(Vec<DivisionConfig>, Vec<f64>)> {
    configure_division_with_weight(dataset, n_openness, repeats, seed, linear_weight)
}

/// `configure_division` with a caller-supplied size-pair weighting.
pub fn configure_division_with_weight(
    dataset: &LabeledDataset,
    n_openness: usize,
    repeats: usize,
    seed: u64,
    weight: impl Fn(usize, usize) -> f64,
) -> Result<(Vec<DivisionConfig>, Vec<f64>)> {
    validate_counts(n_openness, repeats)?;
    let cc = dataset.class_count();
    let pairs = holdout_size_pairs(cc);
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes; at least 3 are needed for a holdout division",
            cc
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = sample_weighted_pairs(&pairs, weight, n_openness, &mut rng)?;
    Ok(build_configs(&drawn, repeats, cc, &mut rng))
}

/// One-class variant: exactly one known class per configuration.
pub fn configure_oneclass_division(
    dataset: &LabeledDataset,
    n_openness: usize,
    repeats: usize,
    seed: u64,
) -> Result<(Vec<DivisionConfig>, Vec<f64>)> {
    validate_counts(n_openness, repeats)?;
    let cc = dataset.class_count();
    let pairs: Vec<(usize, usize)> = (1..cc).map(|u| (1, u)).collect();
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} classes; at least 2 are needed for a one-class division",
            cc
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = sample_weighted_pairs(&pairs, linear_weight, n_openness, &mut rng)?;
    Ok(build_configs(&drawn, repeats, cc, &mut rng))
}

/// Outlier variant: known classes come from `base`, unknown classes from
/// `outlier`; the two class budgets are independent.
pub fn configure_division_outlier(
    base: &LabeledDataset,
    outlier: &LabeledDataset,
    n_openness: usize,
    repeats: usize,
    seed: u64,
) -> Result<(Vec<DivisionConfig>, Vec<f64>)> {
    validate_counts(n_openness, repeats)?;
    let base_cc = base.class_count();
    let outlier_cc = outlier.class_count();
    let mut pairs = Vec::new();
    for k in 2..=base_cc {
        for u in 1..=outlier_cc {
            pairs.push((k, u));
        }
    }
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "outlier division needs ≥ 2 base classes and ≥ 1 outlier class, got {} and {}",
            base_cc, outlier_cc
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drawn = sample_weighted_pairs(&pairs, linear_weight, n_openness, &mut rng)?;

    let mut configs = Vec::with_capacity(drawn.len() * repeats);
    let mut openness_values = Vec::with_capacity(drawn.len());
    for &(n_kkc, n_uuc) in &drawn {
        openness_values.push(openness(n_kkc, n_uuc));
        for _ in 0..repeats {
            let mut base_ids: Vec<usize> = (0..base_cc).collect();
            base_ids.shuffle(&mut rng);
            let mut outlier_ids: Vec<usize> = (0..outlier_cc).collect();
            outlier_ids.shuffle(&mut rng);
            configs.push(DivisionConfig {
                kkc: base_ids[..n_kkc].to_vec(),
                uuc: outlier_ids[..n_uuc].to_vec(),
                openness: openness(n_kkc, n_uuc),
            });
        }
    }
    Ok((configs, openness_values))
}

fn validate_counts(n_openness: usize, repeats: usize) -> Result<()> {
    if n_openness < 1 {
        return Err(Error::InvalidConfig("n_openness must be ≥ 1".into()));
    }
    if repeats < 1 {
        return Err(Error::InvalidConfig("repeats must be ≥ 1".into()));
    }
    Ok(())
}

fn holdout_size_pairs(class_count: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if class_count < 3 {
        return pairs;
    }
    for k in 2..class_count {
        for u in 1..=(class_count - k) {
            pairs.push((k, u));
        }
    }
    pairs
}

/// Dataset wrapped for one experimental configuration: known classes
/// re-indexed to `0..k-1`, unknown samples (when present) carrying the
/// common label `k`, labels one-hot encoded.
#[derive(Debug, Clone)]
pub struct WrappedDataset {
    images: Tensor,
    onehot: Tensor,
    labels: Vec<usize>,
    k: usize,
    label_map: Vec<(usize, usize)>, // (original id, new id) for known classes
}

impl WrappedDataset {
    fn from_parts(
        images: Tensor,
        labels: Vec<usize>,
        k: usize,
        width: usize,
        label_map: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let onehot = onehot_bg(&labels, width)?;
        Ok(Self {
            images,
            onehot,
            labels,
            k,
            label_map,
        })
    }

    /// Wrap already re-indexed data directly: labels must lie in `0..k`
    /// (train-side) or `0..=k` when `include_unknown_column` is set.
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        k: usize,
        include_unknown_column: bool,
    ) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("[{}, ...]", labels.len()),
                got: format!("{:?}", images.shape()),
            });
        }
        let width = k + usize::from(include_unknown_column);
        let label_map = (0..k).map(|c| (c, c)).collect();
        Self::from_parts(images, labels, k, width, label_map)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of known classes.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    /// One-hot encoded labels, `k` columns for train-side sets and `k + 1`
    /// when unknown samples may be present.
    pub fn encoded_labels(&self) -> &Tensor {
        &self.onehot
    }

    /// Decoded labels: `0..k-1` for known classes, `k` for unknown.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Mapping from original class ids to re-indexed ids, ascending.
    pub fn label_map(&self) -> &[(usize, usize)] {
        &self.label_map
    }

    pub fn onehot_width(&self) -> usize {
        self.onehot.shape()[1]
    }

    /// Select a batch of (images, encoded labels) by sample index.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        (
            self.images.gather_rows(indices),
            self.onehot.gather_rows(indices),
        )
    }
}

/// Original-index view of one fold: train indices (known classes only) and
/// test indices (known and unknown classes).
#[derive(Debug, Clone)]
pub struct FoldIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split shared by both protocols. Per class (ascending id): a
/// seeded shuffle, a round-robin 10/90 split, then round-robin fold
/// assignment on the kept side. Only the fold selection depends on `fold`,
/// so different folds of the same seed partition one fixed shuffle.
fn stratified_folds(
    dataset: &LabeledDataset,
    classes: &[usize],
    require_fold_support: &[usize],
    tunning: bool,
    fold: usize,
    n_folds: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FoldIndices> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &class in classes {
        let mut idx = dataset.class_indices(class);
        idx.shuffle(rng);
        let kept: Vec<usize> = idx
            .iter()
            .enumerate()
            .filter(|(pos, _)| (pos % TUNING_SLOTS == 0) == tunning)
            .map(|(_, &i)| i)
            .collect();
        if require_fold_support.contains(&class) && kept.len() < n_folds {
            return Err(Error::TooFewSamples {
                class,
                available: kept.len(),
                needed: n_folds,
            });
        }
        for (pos, &i) in kept.iter().enumerate() {
            if pos % n_folds == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
    }
    Ok(FoldIndices { train, test })
}

/// Original dataset indices selected for one holdout fold, with
/// unknown-class samples already removed from the train side.
pub fn fold_indices(
    dataset: &LabeledDataset,
    kkc: &[usize],
    uuc: &[usize],
    tunning: bool,
    fold: usize,
    n_folds: usize,
    seed: u64,
) -> Result<FoldIndices> {
    validate_division_inputs(dataset, kkc, uuc, fold, n_folds, false)?;
    let mut classes: Vec<usize> = kkc.iter().chain(uuc.iter()).cloned().collect();
    classes.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan = stratified_folds(dataset, &classes, kkc, tunning, fold, n_folds, &mut rng)?;
    plan.train.retain(|&i| kkc.contains(&dataset.labels()[i]));
    Ok(plan)
}

fn validate_division_inputs(
    dataset: &LabeledDataset,
    kkc: &[usize],
    uuc: &[usize],
    fold: usize,
    n_folds: usize,
    cross_dataset: bool,
) -> Result<()> {
    if kkc.is_empty() {
        return Err(Error::InvalidConfig("kkc must not be empty".into()));
    }
    if n_folds < 1 {
        return Err(Error::InvalidConfig("n_folds must be ≥ 1".into()));
    }
    if fold >= n_folds {
        return Err(Error::InvalidConfig(format!(
            "fold {} out of range for {} folds",
            fold, n_folds
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &c in kkc {
        if c >= dataset.class_count() {
            return Err(Error::LabelOutOfRange {
                label: c,
                classes: dataset.class_count(),
            });
        }
        if !seen.insert(c) {
            return Err(Error::InvalidConfig(format!("duplicate class {} in kkc", c)));
        }
    }
    if !cross_dataset {
        for &c in uuc {
            if c >= dataset.class_count() {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: dataset.class_count(),
                });
            }
            if !seen.insert(c) {
                return Err(Error::InvalidConfig(format!(
                    "class {} appears in both kkc and uuc",
                    c
                )));
            }
        }
    }
    Ok(())
}

/// Mapping from original known-class ids (ascending) to `0..k-1`.
fn known_label_map(kkc: &[usize]) -> Vec<(usize, usize)> {
    let mut sorted: Vec<usize> = kkc.to_vec();
    sorted.sort_unstable();
    sorted.into_iter().enumerate().map(|(new, orig)| (orig, new)).collect()
}

/// Extract one cross-validation fold for the holdout protocol.
///
/// Returns `(train, test)`: the train side holds known classes only with
/// `k`-column one-hot labels; the test side holds known and unknown classes
/// with `k + 1` columns.
pub fn get_train_test(
    dataset: &LabeledDataset,
    kkc: &[usize],
    uuc: &[usize],
    tunning: bool,
    fold: usize,
    n_folds: usize,
    seed: u64,
) -> Result<(WrappedDataset, WrappedDataset)> {
    let plan = fold_indices(dataset, kkc, uuc, tunning, fold, n_folds, seed)?;
    let k = kkc.len();
    let map = known_label_map(kkc);
    let lookup: BTreeMap<usize, usize> = map.iter().cloned().collect();

    let relabel = |idx: &[usize]| -> Vec<usize> {
        idx.iter()
            .map(|&i| *lookup.get(&dataset.labels()[i]).unwrap_or(&k))
            .collect()
    };

    let train = WrappedDataset::from_parts(
        dataset.images().gather_rows(&plan.train),
        relabel(&plan.train),
        k,
        k,
        map.clone(),
    )?;
    let test = WrappedDataset::from_parts(
        dataset.images().gather_rows(&plan.test),
        relabel(&plan.test),
        k,
        k + 1,
        map,
    )?;
    Ok((train, test))
}

/// Extract one cross-validation fold for the outlier protocol: train and
/// the known part of test come from `base` exactly as in [`get_train_test`];
/// every sample of the selected outlier classes joins the test side with
/// label `k`, after passing through `transforms`.
#[allow(clippy::too_many_arguments)]
pub fn get_train_test_outlier(
    base: &LabeledDataset,
    outlier: &LabeledDataset,
    kkc: &[usize],
    uuc: &[usize],
    tunning: bool,
    fold: usize,
    n_folds: usize,
    seed: u64,
    shuffle: bool,
    transforms: &[ImageTransform],
) -> Result<(WrappedDataset, WrappedDataset)> {
    if uuc.is_empty() {
        return Err(Error::InvalidConfig("uuc must not be empty".into()));
    }
    validate_division_inputs(outlier, uuc, &[], 0, 1, false)?;
    let (train, base_test) = get_train_test(base, kkc, &[], tunning, fold, n_folds, seed)?;
    let k = kkc.len();

    let mut outlier_idx = Vec::new();
    let mut sorted_uuc: Vec<usize> = uuc.to_vec();
    sorted_uuc.sort_unstable();
    for &class in &sorted_uuc {
        outlier_idx.extend(outlier.class_indices(class));
    }
    let outlier_images = apply_transforms(&outlier.images().gather_rows(&outlier_idx), transforms)?;
    if outlier_images.sample_dims() != base.images().sample_dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", base.images().sample_dims()),
            got: format!("{:?}", outlier_images.sample_dims()),
        });
    }

    let images = base_test.images().concat_rows(&outlier_images)?;
    let mut labels = base_test.labels().to_vec();
    labels.extend(std::iter::repeat(k).take(outlier_idx.len()));

    let (images, labels) = if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        (
            images.gather_rows(&order),
            order.iter().map(|&i| labels[i]).collect(),
        )
    } else {
        (images, labels)
    };

    let test =
        WrappedDataset::from_parts(images, labels, k, k + 1, train.label_map().to_vec())?;
    Ok((train, test))
}
