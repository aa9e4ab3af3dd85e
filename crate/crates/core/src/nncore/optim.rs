use super::model::{Gradients, Group, Layer, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be >= 0",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// SGD-with-momentum state. Buffers exist for exactly the groups that were
/// unfrozen when the state was created and start at zero.
#[derive(Debug, Clone)]
pub struct OptState {
    pub hyper: SgdHyper,
    buffers: Vec<Option<Layer>>,
    classifier: Option<Layer>,
}

impl OptState {
    pub fn new(model: &ModelParams, hyper: SgdHyper) -> Result<Self> {
        hyper.validate()?;
        let mask = model.freeze_mask();
        Ok(OptState {
            hyper,
            buffers: model
                .blocks
                .iter()
                .zip(&mask.blocks)
                .map(|(l, &frozen)| (!frozen).then(|| Layer::zeros_like(l)))
                .collect(),
            classifier: (!mask.classifier).then(|| Layer::zeros_like(&model.classifier)),
        })
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.hyper.learning_rate = lr;
    }

    pub fn buffer(&self, group: Group) -> Option<&Layer> {
        match group {
            Group::Block(i) => self.buffers.get(i).and_then(Option::as_ref),
            Group::Classifier => self.classifier.as_ref(),
        }
    }

    fn buffer_mut(&mut self, group: Group) -> Option<&mut Layer> {
        match group {
            Group::Block(i) => self.buffers.get_mut(i).and_then(Option::as_mut),
            Group::Classifier => self.classifier.as_mut(),
        }
    }
}

/// One momentum-SGD update over the unfrozen groups:
/// `buf ← momentum·buf + grad + weight_decay·param`, `param ← param − lr·buf`.
///
/// `grads` must carry exactly the unfrozen groups; a gradient for a frozen
/// group or a missing gradient for a trainable one is an error, and in that
/// case nothing is modified.
pub fn sgd_step(model: &mut ModelParams, grads: &Gradients, opt: &mut OptState) -> Result<()> {
    if grads.blocks.len() != model.num_blocks() {
        return Err(Error::Shape(format!(
            "gradients cover {} blocks, model has {}",
            grads.blocks.len(),
            model.num_blocks()
        )));
    }
    let groups: Vec<Group> = model.groups().collect();
    for &g in &groups {
        let frozen = model.freeze_mask().is_frozen(g);
        match (frozen, grads.get(g), opt.buffer(g)) {
            (true, Some(_), _) => {
                return Err(Error::InvalidArgument(format!(
                    "gradient supplied for frozen group {g:?}"
                )));
            }
            (false, None, _) => {
                return Err(Error::InvalidArgument(format!(
                    "missing gradient for trainable group {g:?}"
                )));
            }
            (false, Some(_), None) => {
                return Err(Error::Shape(format!("optimizer has no buffer for group {g:?}")));
            }
            (false, Some(grad), Some(buf)) => {
                let layer = model.layer(g);
                if !grad.same_shape(layer) || !buf.same_shape(layer) {
                    return Err(Error::Shape(format!("gradient shape mismatch for group {g:?}")));
                }
            }
            (true, None, _) => {}
        }
    }
    let SgdHyper {
        learning_rate: lr,
        momentum,
        weight_decay: wd,
    } = opt.hyper;
    for g in groups {
        let Some(grad) = grads.get(g) else { continue };
        let buf = opt.buffer_mut(g).expect("checked above");
        let layer = model.layer_mut(g);
        for ((p, b), d) in layer.values_mut().zip(buf.values_mut()).zip(grad.values()) {
            *b = momentum * *b + d + wd * *p;
            *p -= lr * *b;
        }
    }
    Ok(())
}
