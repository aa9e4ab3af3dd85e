use rand::seq::index;
use rand::Rng as _;

use super::{largest_remainder, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Restricts `data` to `classes` and oversamples every class up to the
/// largest per-class count in the set. Each class keeps all of its samples
/// and tops up with uniform draws, with replacement, from its own samples.
pub fn balance_subset(data: &LabeledDataset, classes: &[usize], seed: u64) -> Result<LabeledDataset> {
    let mut classes = classes.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::InvalidArgument("empty class set".into()));
    }
    let counts = data.class_counts();
    if let Some(&c) = classes.iter().find(|&&c| c >= data.num_classes() || counts[c] == 0) {
        return Err(Error::InvalidArgument(format!("class {c} has no samples to balance")));
    }
    let target = classes.iter().map(|&c| counts[c]).max().expect("non-empty");
    let mut rng = rng_from_seed(seed);
    let mut picked = Vec::with_capacity(target * classes.len());
    for &c in &classes {
        let members = data.indices_of(c);
        picked.extend_from_slice(&members);
        for _ in members.len()..target {
            picked.push(members[rng.random_range(0..members.len())]);
        }
    }
    Ok(data.subset(&picked))
}

/// Test set whose label histogram is the largest-remainder apportionment of
/// `size` over the client's training counts, drawn without replacement from
/// `pool` (class by class, ascending). `pool` itself serves as the balanced
/// evaluation set.
pub fn build_client_testset(
    pool: &LabeledDataset,
    client_counts: &[usize],
    size: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if client_counts.len() != pool.num_classes() {
        return Err(Error::Shape(format!(
            "{} client counts for a {}-class pool",
            client_counts.len(),
            pool.num_classes()
        )));
    }
    let weights: Vec<f64> = client_counts.iter().map(|&n| n as f64).collect();
    let targets = largest_remainder(&weights, size)?;
    let mut rng = rng_from_seed(seed);
    let mut picked = Vec::with_capacity(size);
    for (c, &t) in targets.iter().enumerate() {
        if t == 0 {
            continue;
        }
        let members = pool.indices_of(c);
        if members.len() < t {
            return Err(Error::InvalidArgument(format!(
                "test pool has {} samples of class {c}, need {t}",
                members.len()
            )));
        }
        let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), t)
            .into_iter()
            .map(|i| members[i])
            .collect();
        chosen.sort_unstable();
        picked.extend(chosen);
    }
    Ok(pool.subset(&picked))
}
