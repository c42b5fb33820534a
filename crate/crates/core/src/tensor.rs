//! Dense row-major tensors of 64-bit floats.
//!
//! The first dimension is the batch dimension by convention; `row(i)` and
//! `gather_rows` operate on whole samples regardless of rank.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} ({} values)", shape, expected),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// First dimension; the batch size for sample-major tensors.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Values per sample: product of all dimensions after the first.
    pub fn sample_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Dimensions of one sample (everything after the batch dimension).
    pub fn sample_dims(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?} ({} values)", shape, expected),
                got: format!("{:?} ({} values)", self.shape, self.data.len()),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.sample_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.sample_len().max(1))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack the given sample indices into a new tensor with the same
    /// per-sample dimensions.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let w = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Concatenate along the batch dimension. Sample dimensions must match.
    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor> {
        if self.sample_dims() != other.sample_dims() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.sample_dims()),
                got: format!("{:?}", other.sample_dims()),
            });
        }
        let mut shape = self.shape.clone();
        shape[0] = self.batch() + other.batch();
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor { shape, data })
    }
}
