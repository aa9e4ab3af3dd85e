use rand::Rng as _;
use rand_distr::StandardNormal;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nncore::Matrix;
use crate::seed::{derive_rng, derive_seed, rng_from_seed};

/// Unit-norm class centers, one row per class, drawn from the
/// `("synth-means", 0)` stream of `seed`.
pub fn class_means(num_classes: usize, input_dim: usize, seed: u64) -> Matrix {
    let mut rng = derive_rng(seed, "synth-means", 0);
    let mut means = Matrix::zeros(num_classes, input_dim);
    for c in 0..num_classes {
        let row = means.row_mut(c);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        } else {
            row[0] = 1.0;
        }
    }
    means
}

/// `per_class` isotropic Gaussian samples around each row of `means`,
/// class-major order.
pub fn sample_gaussian_classes(means: &Matrix, per_class: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread {spread} must be finite and >= 0"
        )));
    }
    let (num_classes, dim) = means.shape();
    let mut rng = rng_from_seed(seed);
    let mut features = Matrix::zeros(num_classes * per_class, dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        for i in 0..per_class {
            let row = features.row_mut(c * per_class + i);
            for (v, m) in row.iter_mut().zip(means.row(c)) {
                let noise: f64 = rng.sample(StandardNormal);
                *v = m + spread * noise;
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, num_classes)
}

/// Balanced synthetic training set: `per_class` samples per class with
/// standard deviation `spread` around seed-derived unit-norm means.
pub fn synth_generate(
    num_classes: usize,
    input_dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes == 0 || input_dim == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(
            "class count, dimension and per-class count must be positive".into(),
        ));
    }
    let means = class_means(num_classes, input_dim, seed);
    sample_gaussian_classes(&means, per_class, spread, derive_seed(seed, "synth-samples", 0))
}
