//! Forward and backward passes for every layer type used by the 2D and 3D
//! classifiers: convolution, batch normalization, max-pooling, ReLU, dropout,
//! dense, and the softmax cross-entropy loss.
//!
//! Layer functions are pure given their inputs; anything a backward pass
//! needs beyond the forward input (argmax positions, dropout masks, batch
//! statistics) is returned as an explicit cache value. Backward passes are
//! only valid with the cache and inputs from the matching forward call.

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;
mod relu;

pub use batchnorm::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, BatchNormCache,
    BatchNormParams,
};
pub use conv::{
    conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, ConvParams,
};
pub use dense::{dense_backward, dense_forward};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{maxpool_backward, maxpool_forward, MaxPoolCache};
pub use relu::{relu, relu_backward};

/// Whether a pass runs with training behavior (dropout active, batch
/// statistics) or inference behavior (identity dropout, moving statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Convolution padding regime.
///
/// `Same` zero-pads so the output spatial size equals the input size at
/// stride 1 (k-1 total pad per axis, split begin = (k-1)/2, end = rest).
/// `Valid` applies no padding; the output shrinks by k-1 per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn name(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}
