//! Labeled datasets and the data-side operations of the pipeline: synthetic
//! generation, long-tail shaping, Dirichlet partitioning, expert class
//! grouping, class balancing and per-client test sets.

mod csvio;
mod grouping;
mod longtail;
mod partition;
mod sampling;
mod synth;

pub use csvio::{load_csv, write_csv, write_partition_csv};
pub use grouping::{sort_and_group, ExpertAssignment};
pub use longtail::{longtail_counts, shape_longtail};
pub use partition::{dirichlet_partition, PartitionSpec};
pub use sampling::{balance_subset, build_client_testset};
pub use synth::{class_means, sample_gaussian_classes, synth_generate};

use crate::error::{Error, Result};
use crate::nncore::Matrix;

/// Samples with integer labels in `[0, num_classes)`; per-class counts are
/// cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    counts: Vec<usize>,
}

/// One client's local training data.
pub type ClientDataset = LabeledDataset;

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut counts = vec![0; num_classes];
        for &y in &labels {
            if y >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {y} out of range for {num_classes} classes"
                )));
            }
            counts[y] += 1;
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
            counts,
        })
    }

    pub fn empty(dim: usize, num_classes: usize) -> Self {
        LabeledDataset {
            features: Matrix::zeros(0, dim),
            labels: Vec::new(),
            num_classes,
            counts: vec![0; num_classes],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn present_classes(&self) -> Vec<usize> {
        (0..self.num_classes).filter(|&c| self.counts[c] > 0).collect()
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    /// Indices of the samples labeled `class`, ascending.
    pub fn indices_of(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut counts = vec![0; self.num_classes];
        for &y in &labels {
            counts[y] += 1;
        }
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels,
            num_classes: self.num_classes,
            counts,
        }
    }

    /// Samples whose label is in `classes`, in original order.
    pub fn restrict_to(&self, classes: &[usize]) -> LabeledDataset {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&keep)
    }

    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Integer apportionment of `total` proportional to `weights`: floor every
/// quota, then hand the leftover units to the largest fractional remainders
/// (ties to the lower index). The result always sums to `total`.
pub fn largest_remainder(weights: &[f64], total: usize) -> Result<Vec<usize>> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || !sum.is_finite() || sum <= 0.0 || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::InvalidArgument(
            "weights must be non-negative with a positive sum".into(),
        ));
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    if assigned <= total {
        for &i in order.iter().cycle().take(total - assigned) {
            counts[i] += 1;
        }
    } else {
        // floating-point quotas overshot; take back from the smallest remainders
        let mut excess = assigned - total;
        for &i in order.iter().rev() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    Ok(counts)
}
