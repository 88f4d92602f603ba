//! A small CPU tensor library and residual CNN, trained with Adam on
//! binary cross-entropy. All arithmetic is `f64`.

mod adam;
mod checkpoint;
mod layers;
pub mod ops;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{BatchNormRecord, Checkpoint, TensorRecord, CHECKPOINT_FORMAT};
pub use layers::{
    residual_block_forward, Activation, BatchNormLayer, ConvLayer, DenseLayer, InputShape, Layer,
    LayerSpec, Mode, Network, NetworkConfig, Param, ResidualLayer,
};
pub use ops::{BatchNormMode, BatchNormState};
pub use tensor::Tensor;
pub use train::{evaluate, stack_images, train, train_step, Example, TrainConfig, TrainOutcome};
