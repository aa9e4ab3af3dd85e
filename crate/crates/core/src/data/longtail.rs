use rand::seq::index;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Target count per class: `round(n_0 · IF^(−c/(C−1)))` for class index `c`.
pub fn longtail_counts(n0: usize, num_classes: usize, imbalance_factor: f64) -> Result<Vec<usize>> {
    if !(imbalance_factor >= 1.0 && imbalance_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "imbalance factor {imbalance_factor} must be finite and >= 1"
        )));
    }
    if num_classes == 1 {
        return Ok(vec![n0]);
    }
    let denom = (num_classes - 1) as f64;
    Ok((0..num_classes)
        .map(|c| (n0 as f64 * imbalance_factor.powf(-(c as f64) / denom)).round() as usize)
        .collect())
}

/// Subsamples each class, without replacement, to its long-tail target count.
/// `n_0` is the largest per-class count of the input. Kept samples retain
/// their input order.
pub fn shape_longtail(data: &LabeledDataset, imbalance_factor: f64, seed: u64) -> Result<LabeledDataset> {
    let available = data.class_counts();
    let n0 = available.iter().copied().max().unwrap_or(0);
    let targets = longtail_counts(n0, data.num_classes(), imbalance_factor)?;
    let mut rng = rng_from_seed(seed);
    let mut keep = Vec::with_capacity(targets.iter().sum());
    for (c, &target) in targets.iter().enumerate() {
        if available[c] < target {
            return Err(Error::InvalidArgument(format!(
                "class {c} has {} samples, long-tail profile needs {target}",
                available[c]
            )));
        }
        let members = data.indices_of(c);
        let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), target)
            .into_iter()
            .map(|i| members[i])
            .collect();
        chosen.sort_unstable();
        keep.extend(chosen);
    }
    keep.sort_unstable();
    Ok(data.subset(&keep))
}
