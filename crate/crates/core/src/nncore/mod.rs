//! Minimal feed-forward network engine.
//!
//! A model is a chain of affine + ReLU blocks (the backbone) followed by a
//! linear classifier. All arithmetic is done in `f64`; checkpoints store
//! `f32`.

mod codec;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

pub use codec::{deserialize, serialize, FORMAT_VERSION, MAGIC};
pub use loss::{bsce_loss, ce_loss, softmax, LossKind};
pub use model::{init_model, ArchSpec, ForwardCache, FreezeMask, Gradients, Group, Layer, ModelParams};
pub use optim::{sgd_step, OptState, SgdHyper};
pub use tensor::Matrix;
pub use train::{train_epochs, TrainSpec};
