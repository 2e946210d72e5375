//! Minimal differentiable-layer substrate: tensors, layers with explicit
//! backward passes, LSTM cells, Adam, losses and checkpoints.

mod adam;
mod checkpoint;
mod conv;
mod dense;
mod gemm;
mod init;
mod layer;
mod loss;
mod lstm;
mod norm;
mod spatial;
mod tensor;
mod train;
#[cfg(test)]
mod tests;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::Conv2d;
pub use dense::Dense;
pub use init::glorot_uniform;
pub use layer::{relu, sigmoid, Activations, Layer, LayerSpec, Mode, ResidualBlock, Sequential};
pub use loss::{bce_logit_grad, bce_loss, mse_grad, mse_loss, BCE_EPS};
pub use lstm::{LstmCell, LstmState, StepGrads, StepTrace};
pub use norm::BatchNorm2d;
pub use spatial::pooled_extent;
pub use tensor::Tensor;
pub use train::{EpochHook, Saturation};
pub(crate) use train::minibatches;
