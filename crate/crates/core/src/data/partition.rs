use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

use super::{largest_remainder, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Dirichlet concentration; smaller is more heterogeneous.
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::InvalidArgument("num_clients must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} must be finite and > 0",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Splits `data` across clients class by class.
///
/// One ChaCha8 stream seeded with `spec.seed` is consumed in class order. For
/// each class: K draws from Gamma(α, 1) normalized to client shares, the
/// class size apportioned by largest remainder, then the class's samples
/// (ascending index) shuffled and dealt out in client order. Every sample
/// lands on exactly one client; clients may end up empty.
pub fn dirichlet_partition(data: &LabeledDataset, spec: &PartitionSpec) -> Result<Vec<LabeledDataset>> {
    spec.validate()?;
    let k = spec.num_clients;
    let gamma = Gamma::new(spec.alpha, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng_from_seed(spec.seed);
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); k];
    for c in 0..data.num_classes() {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        // all draws can underflow to zero for tiny alpha; fall back to an even split
        let shares = if total > 0.0 && total.is_finite() {
            draws
        } else {
            vec![1.0; k]
        };
        let mut members = data.indices_of(c);
        let counts = largest_remainder(&shares, members.len())?;
        members.shuffle(&mut rng);
        let mut rest = members.as_slice();
        for (client, &n) in counts.iter().enumerate() {
            let (take, tail) = rest.split_at(n);
            assigned[client].extend_from_slice(take);
            rest = tail;
        }
    }
    Ok(assigned
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            data.subset(&idx)
        })
        .collect())
}
