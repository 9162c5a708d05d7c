//! Builders for the two reference classifier architectures and the
//! scaled-down 3D variant used for fast CPU runs.

use super::{LayerKind, LayerSpec, Model};
use crate::error::Result;
use crate::layers::Padding;
use crate::tensor::Scalar;

/// Model identifiers accepted by [`model_spec_by_id`] and the CLI.
pub const MODEL_IDS: [&str; 3] = ["cnn2d", "cnn3d", "cnn3d-small"];

fn conv2d(name: &str, out_channels: usize) -> LayerSpec {
    // Every 2D conv is 3x3 with same padding; the spatial size never shrinks.
    LayerSpec::new(
        name,
        LayerKind::Conv2d {
            kernel: [3, 3],
            out_channels,
            padding: Padding::Same,
            relu: true,
        },
    )
}

fn conv3d(name: &str, kernel: usize, out_channels: usize, padding: Padding) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv3d {
            kernel: [kernel; 3],
            out_channels,
            padding,
            relu: true,
        },
    )
}

fn batchnorm(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::BatchNorm)
}

fn maxpool(name: &str, pool: &[usize]) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::MaxPool {
            pool: pool.to_vec(),
            strides: pool.to_vec(),
        },
    )
}

fn dropout(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dropout { rate: 0.2 })
}

fn dense(name: &str, units: usize, relu: bool) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dense { units, relu })
}

/// Layer list of the 2D classifier.
///
/// The input is one 80x80x80 volume read as an 80x80 image with the 80 depth
/// slices as input channels (the only reading consistent with conv2d_1's
/// 23,072 parameters). All convolutions are 3x3, same padding, stride 1,
/// with a folded ReLU; dense_1 and dense_2 are also ReLU-activated.
pub fn model_2d_spec() -> (Vec<usize>, Vec<LayerSpec>) {
    let layers = vec![
        conv2d("conv2d_1", 32),
        conv2d("conv2d_2", 64),
        conv2d("conv2d_3", 64),
        conv2d("conv2d_4", 64),
        conv2d("conv2d_5", 64),
        batchnorm("batch_normalization_1"),
        maxpool("max_pooling2d_1", &[2, 2]),
        dropout("dropout_1"),
        conv2d("conv2d_6", 128),
        conv2d("conv2d_7", 128),
        batchnorm("batch_normalization_2"),
        maxpool("max_pooling2d_2", &[2, 2]),
        dropout("dropout_2"),
        conv2d("conv2d_8", 256),
        conv2d("conv2d_9", 256),
        conv2d("conv2d_10", 256),
        batchnorm("batch_normalization_3"),
        maxpool("max_pooling2d_3", &[2, 2]),
        dropout("dropout_3"),
        LayerSpec::new("flatten_1", LayerKind::Flatten),
        dense("dense_1", 1024, true),
        dropout("dropout_4"),
        dense("dense_2", 512, true),
        dropout("dropout_5"),
        dense("dense_3", 3, false),
    ];
    (vec![80, 80, 80], layers)
}

/// Layer list of the 3D classifier on an 80x80x80 single-channel volume.
///
/// conv3d_1 uses same padding; every later convolution is valid, which is
/// the only padding assignment consistent with the published output shapes.
/// conv3d_8 and conv3d_9 use 2x2x2 kernels: both their parameter counts
/// (262,400 and 524,544) and the shrink-by-one output shapes force this,
/// even though the surrounding text describes every kernel as 3x3x3.
/// Pooling is (1, 2, 2) with matching strides, so depth is never pooled.
pub fn model_3d_spec() -> (Vec<usize>, Vec<LayerSpec>) {
    let layers = vec![
        conv3d("conv3d_1", 3, 32, Padding::Same),
        batchnorm("batch_normalization_1"),
        maxpool("max_pooling3d_1", &[1, 2, 2]),
        conv3d("conv3d_2", 3, 64, Padding::Valid),
        conv3d("conv3d_3", 3, 64, Padding::Valid),
        conv3d("conv3d_4", 3, 64, Padding::Valid),
        conv3d("conv3d_5", 3, 64, Padding::Valid),
        batchnorm("batch_normalization_2"),
        maxpool("max_pooling3d_2", &[1, 2, 2]),
        dropout("dropout_1"),
        conv3d("conv3d_6", 3, 128, Padding::Valid),
        conv3d("conv3d_7", 3, 128, Padding::Valid),
        batchnorm("batch_normalization_3"),
        maxpool("max_pooling3d_3", &[1, 2, 2]),
        dropout("dropout_2"),
        conv3d("conv3d_8", 2, 256, Padding::Valid),
        conv3d("conv3d_9", 2, 256, Padding::Valid),
        conv3d("conv3d_10", 3, 256, Padding::Valid),
        batchnorm("batch_normalization_4"),
        maxpool("max_pooling3d_4", &[1, 2, 2]),
        dropout("dropout_3"),
        LayerSpec::new("flatten_1", LayerKind::Flatten),
        dense("dense_1", 1024, true),
        dropout("dropout_4"),
        dense("dense_2", 512, true),
        dropout("dropout_5"),
        dense("dense_3", 3, false),
    ];
    (vec![80, 80, 80, 1], layers)
}

/// Scaled-down 3D variant for CI and desk-scale runs: 32x32x32 input,
/// channel widths quartered (8/16/32/64 conv, 256/128 dense), one
/// convolution per block. It mirrors the full model's padding decisions
/// (same on the first conv, valid after) and its kernel-size pattern (3x3x3
/// until the spatial budget forces 2x2x2), with the same (1, 2, 2) pooling.
pub fn model_3d_small_spec() -> (Vec<usize>, Vec<LayerSpec>) {
    let layers = vec![
        conv3d("conv3d_1", 3, 8, Padding::Same),
        batchnorm("batch_normalization_1"),
        maxpool("max_pooling3d_1", &[1, 2, 2]),
        conv3d("conv3d_2", 3, 16, Padding::Valid),
        batchnorm("batch_normalization_2"),
        maxpool("max_pooling3d_2", &[1, 2, 2]),
        dropout("dropout_1"),
        conv3d("conv3d_3", 2, 32, Padding::Valid),
        batchnorm("batch_normalization_3"),
        maxpool("max_pooling3d_3", &[1, 2, 2]),
        dropout("dropout_2"),
        conv3d("conv3d_4", 2, 64, Padding::Valid),
        batchnorm("batch_normalization_4"),
        maxpool("max_pooling3d_4", &[1, 2, 2]),
        dropout("dropout_3"),
        LayerSpec::new("flatten_1", LayerKind::Flatten),
        dense("dense_1", 256, true),
        dropout("dropout_4"),
        dense("dense_2", 128, true),
        dropout("dropout_5"),
        dense("dense_3", 3, false),
    ];
    (vec![32, 32, 32, 1], layers)
}

/// Looks up a model specification by its CLI identifier.
pub fn model_spec_by_id(id: &str) -> Option<(Vec<usize>, Vec<LayerSpec>)> {
    match id {
        "cnn2d" => Some(model_2d_spec()),
        "cnn3d" => Some(model_3d_spec()),
        "cnn3d-small" => Some(model_3d_small_spec()),
        _ => None,
    }
}

pub fn build_model_2d<T: Scalar>() -> Result<Model<T>> {
    let (input, layers) = model_2d_spec();
    Model::new("cnn2d", input, layers)
}

pub fn build_model_3d<T: Scalar>() -> Result<Model<T>> {
    let (input, layers) = model_3d_spec();
    Model::new("cnn3d", input, layers)
}

pub fn build_model_3d_small<T: Scalar>() -> Result<Model<T>> {
    let (input, layers) = model_3d_small_spec();
    Model::new("cnn3d-small", input, layers)
}
