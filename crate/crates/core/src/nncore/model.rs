use rand::distr::{Distribution, Uniform};

use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Network shape plus the seed its initial weights are drawn from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_dim: usize,
    /// One affine + ReLU block per entry.
    pub block_widths: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if self.block_widths.is_empty() {
            return Err(Error::InvalidArgument("block_widths must be non-empty".into()));
        }
        if self.block_widths.contains(&0) {
            return Err(Error::InvalidArgument("block widths must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the feature vector fed to the classifier.
    pub fn feature_dim(&self) -> usize {
        *self.block_widths.last().expect("validated arch has blocks")
    }

    /// `(fan_in, fan_out)` of every block followed by the classifier.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.block_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.block_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, self.num_classes));
        dims
    }
}

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn zeros_like(other: &Layer) -> Self {
        Layer {
            weight: Matrix::zeros(other.weight.rows(), other.weight.cols()),
            bias: vec![0.0; other.bias.len()],
        }
    }

    pub fn same_shape(&self, other: &Layer) -> bool {
        self.weight.shape() == other.weight.shape() && self.bias.len() == other.bias.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.as_slice().iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }

    pub fn num_values(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

/// Parameter group addressed by the freeze mask and the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Block(usize),
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    pub blocks: Vec<bool>,
    pub classifier: bool,
}

impl FreezeMask {
    pub fn none(num_blocks: usize) -> Self {
        FreezeMask {
            blocks: vec![false; num_blocks],
            classifier: false,
        }
    }

    pub fn is_frozen(&self, group: Group) -> bool {
        match group {
            Group::Block(i) => self.blocks[i],
            Group::Classifier => self.classifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchSpec,
    pub blocks: Vec<Layer>,
    pub classifier: Layer,
    freeze: FreezeMask,
}

/// Per-group gradients; `None` for groups that received no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Option<Layer>>,
    pub classifier: Option<Layer>,
}

impl Gradients {
    pub fn empty(num_blocks: usize) -> Self {
        Gradients {
            blocks: vec![None; num_blocks],
            classifier: None,
        }
    }

    pub fn get(&self, group: Group) -> Option<&Layer> {
        match group {
            Group::Block(i) => self.blocks.get(i).and_then(Option::as_ref),
            Group::Classifier => self.classifier.as_ref(),
        }
    }
}

/// Activations saved by [`ModelParams::forward_cached`] for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` is the input to block `i`; the last entry feeds the classifier.
    inputs: Vec<Matrix>,
    /// Pre-activation outputs of each block.
    pre: Vec<Matrix>,
    pub logits: Matrix,
}

/// Builds a model with weights drawn uniformly from `[-a, a]`,
/// `a = sqrt(6 / (fan_in + fan_out))`, per layer in declaration order
/// (block 0 .. block L-1, then the classifier) from a ChaCha8 stream seeded
/// with `init_seed`. Draws are taken in `f32` so a fresh model is exactly
/// representable in a checkpoint. Biases start at zero.
pub fn init_model(spec: &ArchSpec) -> Result<ModelParams> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.init_seed);
    let mut layers: Vec<Layer> = spec
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-a, a).expect("finite bound");
            let mut layer = Layer::zeros(fan_in, fan_out);
            for w in layer.weight.as_mut_slice() {
                *w = f64::from(dist.sample(&mut rng));
            }
            layer
        })
        .collect();
    let classifier = layers.pop().expect("classifier layer");
    Ok(ModelParams {
        freeze: FreezeMask::none(layers.len()),
        arch: spec.clone(),
        blocks: layers,
        classifier,
    })
}

impl ModelParams {
    /// Assembles a model from explicit layers. Shapes must agree with `arch`.
    pub fn from_layers(arch: ArchSpec, blocks: Vec<Layer>, classifier: Layer) -> Result<Self> {
        arch.validate()?;
        let dims = arch.layer_dims();
        if blocks.len() + 1 != dims.len() {
            return Err(Error::Shape(format!(
                "expected {} blocks, got {}",
                dims.len() - 1,
                blocks.len()
            )));
        }
        for (layer, &(fan_in, fan_out)) in blocks.iter().chain(std::iter::once(&classifier)).zip(&dims) {
            if layer.weight.shape() != (fan_out, fan_in) || layer.bias.len() != fan_out {
                return Err(Error::Shape(format!(
                    "layer shaped {:?}+{} does not match {fan_out}x{fan_in}",
                    layer.weight.shape(),
                    layer.bias.len()
                )));
            }
        }
        let model = ModelParams {
            freeze: FreezeMask::none(blocks.len()),
            arch,
            blocks,
            classifier,
        };
        if !model.is_finite() {
            return Err(Error::Numeric("model parameters must be finite".into()));
        }
        Ok(model)
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_classes(&self) -> usize {
        self.arch.num_classes
    }

    pub fn freeze_mask(&self) -> &FreezeMask {
        &self.freeze
    }

    pub fn set_freeze_mask(&mut self, mask: FreezeMask) -> Result<()> {
        if mask.blocks.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "freeze mask covers {} blocks, model has {}",
                mask.blocks.len(),
                self.blocks.len()
            )));
        }
        self.freeze = mask;
        Ok(())
    }

    pub fn set_frozen(&mut self, group: Group, frozen: bool) {
        match group {
            Group::Block(i) => self.freeze.blocks[i] = frozen,
            Group::Classifier => self.freeze.classifier = frozen,
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.freeze = FreezeMask::none(self.blocks.len());
    }

    /// Freezes everything except the classifier.
    pub fn train_classifier_only(&mut self) {
        self.freeze = FreezeMask {
            blocks: vec![true; self.blocks.len()],
            classifier: false,
        };
    }

    /// Freezes everything except the last block and the classifier.
    pub fn train_last_block_and_classifier(&mut self) {
        let n = self.blocks.len();
        self.freeze = FreezeMask {
            blocks: (0..n).map(|i| i + 1 != n).collect(),
            classifier: false,
        };
    }

    pub fn groups(&self) -> impl Iterator<Item = Group> {
        (0..self.blocks.len())
            .map(Group::Block)
            .chain(std::iter::once(Group::Classifier))
    }

    pub fn layer(&self, group: Group) -> &Layer {
        match group {
            Group::Block(i) => &self.blocks[i],
            Group::Classifier => &self.classifier,
        }
    }

    pub fn layer_mut(&mut self, group: Group) -> &mut Layer {
        match group {
            Group::Block(i) => &mut self.blocks[i],
            Group::Classifier => &mut self.classifier,
        }
    }

    /// All parameter values in declaration order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.blocks
            .iter()
            .flat_map(Layer::values)
            .chain(self.classifier.values())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.blocks
            .iter_mut()
            .flat_map(Layer::values_mut)
            .chain(self.classifier.values_mut())
    }

    pub fn num_values(&self) -> usize {
        self.blocks.iter().map(Layer::num_values).sum::<usize>() + self.classifier.num_values()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Bitwise equality of architecture and every parameter.
    pub fn bits_eq(&self, other: &ModelParams) -> bool {
        self.arch == other.arch
            && self.num_values() == other.num_values()
            && self
                .values()
                .zip(other.values())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Bitwise equality of a single parameter group.
    pub fn group_bits_eq(&self, other: &ModelParams, group: Group) -> bool {
        let (a, b) = (self.layer(group), other.layer(group));
        a.same_shape(b) && a.values().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.blocks.len() == other.blocks.len()
            && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.same_shape(b))
            && self.classifier.same_shape(&other.classifier)
    }

    /// Rounds every parameter through `f32`, the precision checkpoints store.
    pub fn quantize_f32(&mut self) {
        for v in self.values_mut() {
            *v = f64::from(*v as f32);
        }
    }

    /// Squared L2 norm of the class-`c` classifier weight row (bias excluded).
    pub fn classifier_row_norm_sq(&self, class: usize) -> f64 {
        self.classifier.weight.row(class).iter().map(|w| w * w).sum()
    }

    /// Squared Frobenius norm of the classifier weight matrix (bias excluded).
    pub fn classifier_norm_sq(&self) -> f64 {
        self.classifier.weight.as_slice().iter().map(|w| w * w).sum()
    }

    fn check_inputs(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "input width {} does not match model input_dim {}",
                inputs.cols(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_inputs(inputs)?;
        let mut h = inputs.clone();
        for block in &self.blocks {
            h = h.affine(&block.weight, &block.bias);
            relu_in_place(h.as_mut_slice());
        }
        Ok(h.affine(&self.classifier.weight, &self.classifier.bias))
    }

    /// Logits for a single input vector.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&m)?.into_vec())
    }

    pub fn forward_cached(&self, inputs: &Matrix) -> Result<ForwardCache> {
        self.check_inputs(inputs)?;
        let mut acts = Vec::with_capacity(self.blocks.len() + 1);
        let mut pre = Vec::with_capacity(self.blocks.len());
        acts.push(inputs.clone());
        for block in &self.blocks {
            let z = acts.last().expect("input").affine(&block.weight, &block.bias);
            let mut a = z.clone();
            relu_in_place(a.as_mut_slice());
            pre.push(z);
            acts.push(a);
        }
        let logits = acts
            .last()
            .expect("features")
            .affine(&self.classifier.weight, &self.classifier.bias);
        Ok(ForwardCache {
            inputs: acts,
            pre,
            logits,
        })
    }

    /// Backpropagates `dlogits` and returns gradients for unfrozen groups only.
    /// Propagation stops below the lowest unfrozen block.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients> {
        if dlogits.shape() != cache.logits.shape() {
            return Err(Error::Shape(format!(
                "dlogits {:?} vs logits {:?}",
                dlogits.shape(),
                cache.logits.shape()
            )));
        }
        let n = self.blocks.len();
        let mut grads = Gradients::empty(n);
        let features = &cache.inputs[n];
        if !self.freeze.classifier {
            grads.classifier = Some(Layer {
                weight: dlogits.t_matmul(features),
                bias: dlogits.column_sums(),
            });
        }
        let lowest = match self.freeze.blocks.iter().position(|f| !f) {
            Some(i) => i,
            None => return Ok(grads),
        };
        let mut d_out = dlogits.matmul(&self.classifier.weight);
        for i in (lowest..n).rev() {
            let mut d_pre = d_out;
            for (g, z) in d_pre.as_mut_slice().iter_mut().zip(cache.pre[i].as_slice()) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
            if !self.freeze.blocks[i] {
                grads.blocks[i] = Some(Layer {
                    weight: d_pre.t_matmul(&cache.inputs[i]),
                    bias: d_pre.column_sums(),
                });
            }
            if i == lowest {
                break;
            }
            d_out = d_pre.matmul(&self.blocks[i].weight);
        }
        Ok(grads)
    }
}

fn relu_in_place(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}
