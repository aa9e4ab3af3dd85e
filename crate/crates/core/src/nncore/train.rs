use rand::seq::SliceRandom;

use super::loss::{bsce_loss, ce_loss, LossKind};
use super::model::ModelParams;
use super::optim::{sgd_step, OptState};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub epochs: usize,
    pub loss: LossKind,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

/// Mini-batch SGD for `spec.epochs` epochs. Each epoch visits the data in a
/// fresh permutation drawn from one ChaCha8 stream seeded with
/// `spec.shuffle_seed`. Balanced-softmax training uses the dataset's own class
/// counts.
///
/// Returns the sample-weighted mean loss of the final epoch, or `None` when
/// no epoch ran.
pub fn train_epochs(
    model: &mut ModelParams,
    data: &LabeledDataset,
    spec: &TrainSpec,
    opt: &mut OptState,
) -> Result<Option<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    if spec.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    if data.num_classes() != model.num_classes() || data.dim() != model.arch().input_dim {
        return Err(Error::Shape(format!(
            "dataset ({} classes, dim {}) does not fit model ({} classes, dim {})",
            data.num_classes(),
            data.dim(),
            model.num_classes(),
            model.arch().input_dim
        )));
    }
    let counts = data.class_counts().to_vec();
    let mut rng = rng_from_seed(spec.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut last = None;
    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(spec.batch_size) {
            let (inputs, labels) = data.batch(chunk);
            let cache = model.forward_cached(&inputs)?;
            let (loss, dlogits) = match spec.loss {
                LossKind::CrossEntropy => ce_loss(&cache.logits, &labels)?,
                LossKind::BalancedSoftmax => bsce_loss(&cache.logits, &labels, &counts)?,
            };
            let grads = model.backward(&cache, &dlogits)?;
            sgd_step(model, &grads, opt)?;
            sum += loss * chunk.len() as f64;
        }
        last = Some(sum / data.len() as f64);
    }
    if !model.is_finite() {
        return Err(Error::Numeric("training diverged to non-finite parameters".into()));
    }
    Ok(last)
}
