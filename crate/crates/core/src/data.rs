//! Dataset ingestion and preprocessing.
//!
//! MNIST is read from the four standard IDX files on local disk and merged
//! into a single pool (training order followed by test order) so that the
//! division module can draw cross-validation folds from all 70,000 samples.
//! A synthetic blob generator provides a deterministic stand-in dataset for
//! tests and for the outlier protocol.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Pool of images with integer labels; the unified base set.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Tensor, // [N, depth, H, W], values in [0, 1]
    labels: Vec<usize>,
    class_count: usize,
    name: String,
}

impl LabeledDataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        class_count: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if images.shape().len() != 4 || images.batch() != labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("[{}, depth, H, W]", labels.len()),
                got: format!("{:?}", images.shape()),
            });
        }
        if class_count == 0 {
            return Err(Error::InvalidConfig("class_count must be ≥ 1".into()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// (depth, height, width) of one sample.
    pub fn sample_dims(&self) -> (usize, usize, usize) {
        let d = self.images.sample_dims();
        (d[0], d[1], d[2])
    }

    /// Indices of all samples of a class, in dataset order.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn idx_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::IdxFormat {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| idx_error(path, format!("cannot read: {e}")))?;
    if bytes.len() < 16 {
        return Err(idx_error(path, "header shorter than 16 bytes"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_error(
            path,
            format!("magic {:#010x}, expected {:#010x}", magic, IDX_IMAGES_MAGIC),
        ));
    }
    let n = be_u32(&bytes, 4) as usize;
    let rows = be_u32(&bytes, 8) as usize;
    let cols = be_u32(&bytes, 12) as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(idx_error(
            path,
            format!("payload is {} bytes, expected {}", bytes.len() - 16, expected - 16),
        ));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| idx_error(path, format!("cannot read: {e}")))?;
    if bytes.len() < 8 {
        return Err(idx_error(path, "header shorter than 8 bytes"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_error(
            path,
            format!("magic {:#010x}, expected {:#010x}", magic, IDX_LABELS_MAGIC),
        ));
    }
    let n = be_u32(&bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(idx_error(
            path,
            format!("payload is {} bytes, expected {}", bytes.len() - 8, n),
        ));
    }
    Ok(bytes[8..].to_vec())
}

/// Load MNIST from a directory holding the four standard IDX files and
/// merge train and test into one pool, training order first.
///
/// Pixel bytes are scaled by 1/255.
pub fn load_mnist(dir: &Path) -> Result<LabeledDataset> {
    let (tr_n, tr_rows, tr_cols, tr_pixels) = read_idx_images(&dir.join("train-images-idx3-ubyte"))?;
    let tr_labels = read_idx_labels(&dir.join("train-labels-idx1-ubyte"))?;
    let (te_n, te_rows, te_cols, te_pixels) = read_idx_images(&dir.join("t10k-images-idx3-ubyte"))?;
    let te_labels = read_idx_labels(&dir.join("t10k-labels-idx1-ubyte"))?;
    if tr_labels.len() != tr_n || te_labels.len() != te_n {
        return Err(idx_error(dir, "image and label counts disagree"));
    }
    if (tr_rows, tr_cols) != (te_rows, te_cols) {
        return Err(idx_error(dir, "train and test image dimensions disagree"));
    }

    let n = tr_n + te_n;
    let mut data = Vec::with_capacity(n * tr_rows * tr_cols);
    data.extend(tr_pixels.iter().map(|&b| b as f64 / 255.0));
    data.extend(te_pixels.iter().map(|&b| b as f64 / 255.0));
    let images = Tensor::new(vec![n, 1, tr_rows, tr_cols], data)?;

    let labels: Vec<usize> = tr_labels
        .iter()
        .chain(te_labels.iter())
        .map(|&b| b as usize)
        .collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(images, labels, class_count, "mnist")
}

/// Deterministic synthetic dataset: one random template image per class
/// plus per-sample Gaussian pixel noise (σ = 0.1), clamped to [0, 1].
pub fn make_synthetic_blobs(
    n_classes: usize,
    n_per_class: usize,
    depth: usize,
    img_size: usize,
    seed: u64,
) -> LabeledDataset {
    assert!(
        n_classes >= 1 && n_per_class >= 1 && depth >= 1 && img_size >= 1,
        "all blob dimensions must be ≥ 1"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample_len = depth * img_size * img_size;
    let templates: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..sample_len).map(|_| rng.random::<f64>()).collect())
        .collect();

    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let n = n_classes * n_per_class;
    let mut data = Vec::with_capacity(n * sample_len);
    let mut labels = Vec::with_capacity(n);
    for (class, template) in templates.iter().enumerate() {
        for _ in 0..n_per_class {
            for &t in template {
                data.push((t + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    let images =
        Tensor::new(vec![n, depth, img_size, img_size], data).expect("consistent blob shape");
    LabeledDataset::new(images, labels, n_classes, "synthetic-blobs")
        .expect("blobs satisfy dataset invariants")
}

/// One-hot encode labels over `n_classes` columns.
pub fn onehot_bg(labels: &[usize], n_classes: usize) -> Result<Tensor> {
    let mut data = vec![0.0; labels.len() * n_classes];
    for (i, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::LabelOutOfRange {
                label,
                classes: n_classes,
            });
        }
        data[i * n_classes + label] = 1.0;
    }
    Tensor::new(vec![labels.len(), n_classes], data)
}

/// Invert image intensity: `x ↦ 1 − x` elementwise.
pub fn inverse_transform(images: &Tensor) -> Tensor {
    let data = images.data().iter().map(|&v| 1.0 - v).collect();
    Tensor::new(images.shape().to_vec(), data).expect("shape preserved")
}

/// Average the three color channels into one.
pub fn grayscale_transform(images: &Tensor) -> Result<Tensor> {
    match images.shape() {
        [_, 3, _, _] => {}
        _ => {
            return Err(Error::ShapeMismatch {
                expected: "[N, 3, H, W]".into(),
                got: format!("{:?}", images.shape()),
            })
        }
    }
    let (n, h, w) = (images.shape()[0], images.shape()[2], images.shape()[3]);
    let plane = h * w;
    let src = images.data();
    let mut data = Vec::with_capacity(n * plane);
    for i in 0..n {
        let base = i * 3 * plane;
        for p in 0..plane {
            data.push((src[base + p] + src[base + plane + p] + src[base + 2 * plane + p]) / 3.0);
        }
    }
    Tensor::new(vec![n, 1, h, w], data)
}

/// Named image transforms applied to outlier datasets so their
/// representation matches the base dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransform {
    Inverse,
    Grayscale,
}

pub fn apply_transforms(images: &Tensor, chain: &[ImageTransform]) -> Result<Tensor> {
    let mut cur = images.clone();
    for t in chain {
        cur = match t {
            ImageTransform::Inverse => inverse_transform(&cur),
            ImageTransform::Grayscale => grayscale_transform(&cur)?,
        };
    }
    Ok(cur)
}
