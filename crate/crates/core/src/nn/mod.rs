//! Layers, gradients, initialization, optimization and the CNN builders.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::glorot_uniform_init;
pub use layers::{
    conv2d_forward, conv2d_param_count, dense_forward, dropout_forward, maxpool2d_forward, relu,
    sigmoid, Activation, Conv2DLayer, DenseLayer, DropoutLayer, Layer, MaxPool2DLayer,
};
pub use loss::{binary_cross_entropy, BCE_EPSILON};
pub use model::{hard_labels, LayerSummary, Mode, Model, ModelConfig, Variant};
pub use train::{evaluate, fit, Dataset, FitConfig, History, Optimizer};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

/// Builds one of the reference architectures at full size.
pub fn build_model(variant: Variant, init_seed: u64, dropout_seed: u64) -> Result<Model<f32>> {
    Model::build(&ModelConfig::for_variant(variant), init_seed, dropout_seed)
}

/// Parameter gradients of the batch log loss.
pub fn backward<T: Scalar>(
    model: &Model<T>,
    batch: &Tensor<T>,
    labels: &[u8],
    mode: Mode,
) -> Result<Vec<Tensor<T>>> {
    Ok(model.backward(batch, labels, mode)?.gradients)
}
