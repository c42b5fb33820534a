//! The four confusion matrices and their balanced-accuracy scores.
//!
//! One accumulator fills all four matrices from a stream of
//! `(true label, open-set prediction, closed-set prediction)` triples with
//! `k` known classes and the unknown label `k`:
//!
//! - inner (`k×k`): closed-set predictions of known-class samples
//! - outer (`2×2`): known vs unknown, known classes as the positive row
//! - halfpoint (`k×(k+1)`): open-set predictions of known-class samples,
//!   so false unknowns count against the diagonal
//! - overall (`(k+1)×(k+1)`): open-set predictions of every sample
//!
//! Every score is the balanced accuracy of its matrix: the mean over rows
//! with nonzero support of `diagonal / row sum`. Rows without support are
//! excluded from the mean rather than scored as 0 or 1.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            counts: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidConfig("ragged confusion matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn increment(&mut self, row: usize, col: usize) {
        self.counts[row * self.cols + col] += 1;
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn row_sum(&self, row: usize) -> u64 {
        self.counts[row * self.cols..(row + 1) * self.cols]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn as_rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.cols).map(|c| c.to_vec()).collect()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{}×{}", self.rows, self.cols),
                got: format!("{}×{}", other.rows, other.cols),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Mean of `diagonal / row sum` over rows with nonzero support.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut supported = 0usize;
        for r in 0..self.rows {
            let total = self.row_sum(r);
            if total == 0 {
                continue;
            }
            debug_assert!(r < self.cols, "diagonal cell exists for supported rows");
            sum += self.count(r, r) as f64 / total as f64;
            supported += 1;
        }
        if supported == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(sum / supported as f64)
    }
}

impl Serialize for ConfusionMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.as_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ConfusionMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<u64>>::deserialize(deserializer)?;
        ConfusionMatrix::from_rows(rows).map_err(D::Error::custom)
    }
}

/// The four matrices of one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSet {
    pub inner: ConfusionMatrix,
    pub outer: ConfusionMatrix,
    pub halfpoint: ConfusionMatrix,
    pub overall: ConfusionMatrix,
}

/// Scores of one evaluation pass, with the matrices when requested.
#[derive(Debug, Clone)]
pub struct ScoreReport {
    pub inner: f64,
    pub outer: f64,
    pub halfpoint: f64,
    pub overall: f64,
    pub matrices: Option<ConfusionSet>,
}

pub fn inner_score(set: &ConfusionSet) -> Result<f64> {
    set.inner.balanced_accuracy()
}

pub fn outer_score(set: &ConfusionSet) -> Result<f64> {
    set.outer.balanced_accuracy()
}

pub fn halfpoint_score(set: &ConfusionSet) -> Result<f64> {
    set.halfpoint.balanced_accuracy()
}

pub fn overall_score(set: &ConfusionSet) -> Result<f64> {
    set.overall.balanced_accuracy()
}

/// Accumulates prediction triples into the four matrices. Accumulators are
/// single-writer; shards merge by matrix summation.
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    k: usize,
    set: ConfusionSet,
}

impl ScoreAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            set: ConfusionSet {
                inner: ConfusionMatrix::new(k, k),
                outer: ConfusionMatrix::new(2, 2),
                halfpoint: ConfusionMatrix::new(k, k + 1),
                overall: ConfusionMatrix::new(k + 1, k + 1),
            },
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Route one sample. `truth` and `open_pred` may carry the unknown
    /// label `k`; `closed_pred` is always a known class.
    pub fn push(&mut self, truth: usize, open_pred: usize, closed_pred: usize) -> Result<()> {
        if truth > self.k {
            return Err(Error::LabelOutOfRange {
                label: truth,
                classes: self.k + 1,
            });
        }
        if open_pred > self.k {
            return Err(Error::LabelOutOfRange {
                label: open_pred,
                classes: self.k + 1,
            });
        }
        if closed_pred >= self.k {
            return Err(Error::LabelOutOfRange {
                label: closed_pred,
                classes: self.k,
            });
        }
        self.set.overall.increment(truth, open_pred);
        self.set
            .outer
            .increment(usize::from(truth == self.k), usize::from(open_pred == self.k));
        if truth < self.k {
            self.set.inner.increment(truth, closed_pred);
            self.set.halfpoint.increment(truth, open_pred);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ScoreAccumulator) -> Result<()> {
        if self.k != other.k {
            return Err(Error::InvalidConfig(format!(
                "cannot merge accumulators for {} and {} classes",
                self.k, other.k
            )));
        }
        self.set.inner.merge(&other.set.inner)?;
        self.set.outer.merge(&other.set.outer)?;
        self.set.halfpoint.merge(&other.set.halfpoint)?;
        self.set.overall.merge(&other.set.overall)?;
        Ok(())
    }

    pub fn matrices(&self) -> &ConfusionSet {
        &self.set
    }

    /// Compute the four scores; `conf` keeps the matrices in the report.
    pub fn report(self, conf: bool) -> Result<ScoreReport> {
        Ok(ScoreReport {
            inner: inner_score(&self.set)?,
            outer: outer_score(&self.set)?,
            halfpoint: halfpoint_score(&self.set)?,
            overall: overall_score(&self.set)?,
            matrices: conf.then_some(self.set),
        })
    }
}
