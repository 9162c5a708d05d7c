//! Shape inference, parameter counting, and parameter allocation over layer
//! specifications. All three walk the specs alone; nothing here touches
//! tensor data, so counting the full-size models is effectively free.

use super::{LayerKind, LayerParams, LayerSpec};
use crate::error::{Error, Result};
use crate::layers::{BatchNormParams, ConvParams, Padding};
use crate::tensor::{Scalar, Tensor};

fn conv_axis(input: usize, kernel: usize, padding: Padding, layer: &str) -> Result<usize> {
    match padding {
        Padding::Same => Ok(input),
        Padding::Valid => {
            if input < kernel {
                Err(Error::Shape(format!(
                    "layer \"{layer}\": valid convolution underflow (input extent {input} < kernel {kernel})"
                )))
            } else {
                Ok(input - kernel + 1)
            }
        }
    }
}

fn layer_output_shape(layer: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    let name = &layer.name;
    match &layer.kind {
        LayerKind::Conv2d {
            kernel,
            out_channels,
            padding,
            ..
        } => {
            if input.len() != 3 {
                return Err(Error::Shape(format!(
                    "layer \"{name}\": conv2d expects [h, w, c] input, got {input:?}"
                )));
            }
            Ok(vec![
                conv_axis(input[0], kernel[0], *padding, name)?,
                conv_axis(input[1], kernel[1], *padding, name)?,
                *out_channels,
            ])
        }
        LayerKind::Conv3d {
            kernel,
            out_channels,
            padding,
            ..
        } => {
            if input.len() != 4 {
                return Err(Error::Shape(format!(
                    "layer \"{name}\": conv3d expects [d, h, w, c] input, got {input:?}"
                )));
            }
            Ok(vec![
                conv_axis(input[0], kernel[0], *padding, name)?,
                conv_axis(input[1], kernel[1], *padding, name)?,
                conv_axis(input[2], kernel[2], *padding, name)?,
                *out_channels,
            ])
        }
        LayerKind::BatchNorm | LayerKind::Dropout { .. } | LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::MaxPool { pool, strides } => {
            if input.len() != pool.len() + 1 {
                return Err(Error::Shape(format!(
                    "layer \"{name}\": pool over {} axes does not fit input {input:?}",
                    pool.len()
                )));
            }
            let mut out = Vec::with_capacity(input.len());
            for axis in 0..pool.len() {
                if pool[axis] > input[axis] {
                    return Err(Error::Shape(format!(
                        "layer \"{name}\": pool size {} exceeds input extent {} on axis {axis}",
                        pool[axis], input[axis]
                    )));
                }
                out.push((input[axis] - pool[axis]) / strides[axis] + 1);
            }
            out.push(input[pool.len()]);
            Ok(out)
        }
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
        LayerKind::Dense { units, .. } => {
            if input.len() != 1 {
                return Err(Error::Shape(format!(
                    "layer \"{name}\": dense expects a flat input, got {input:?}"
                )));
            }
            Ok(vec![*units])
        }
    }
}

/// Output shape of every layer in order. Fails loudly, naming the offending
/// layer, if any dimension under-runs.
pub fn infer_shapes(
    input_shape: &[usize],
    layers: &[LayerSpec],
) -> Result<Vec<(String, Vec<usize>)>> {
    crate::tensor::element_count(input_shape)?;
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input_shape.to_vec();
    for layer in layers {
        cur = layer_output_shape(layer, &cur)?;
        shapes.push((layer.name.clone(), cur.clone()));
    }
    Ok(shapes)
}

/// Per-layer parameter counts plus trainable and non-trainable totals.
#[derive(Debug, Clone)]
pub struct ParamCountReport {
    pub per_layer: Vec<(String, usize)>,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamCountReport {
    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }

    pub fn for_layer(&self, name: &str) -> Option<usize> {
        self.per_layer
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| *c)
    }
}

pub fn count_params(input_shape: &[usize], layers: &[LayerSpec]) -> Result<ParamCountReport> {
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut trainable = 0usize;
    let mut non_trainable = 0usize;
    let mut cur = input_shape.to_vec();
    for layer in layers {
        let c_in = *cur.last().expect("shapes are non-empty");
        let count = match &layer.kind {
            LayerKind::Conv2d {
                kernel,
                out_channels,
                ..
            } => kernel[0] * kernel[1] * c_in * out_channels + out_channels,
            LayerKind::Conv3d {
                kernel,
                out_channels,
                ..
            } => kernel[0] * kernel[1] * kernel[2] * c_in * out_channels + out_channels,
            // gamma + beta trainable, moving mean + moving var not.
            LayerKind::BatchNorm => {
                non_trainable += 2 * c_in;
                4 * c_in
            }
            LayerKind::Dense { units, .. } => c_in * units + units,
            _ => 0,
        };
        if let LayerKind::BatchNorm = layer.kind {
            trainable += 2 * c_in;
        } else {
            trainable += count;
        }
        per_layer.push((layer.name.clone(), count));
        cur = layer_output_shape(layer, &cur)?;
    }
    Ok(ParamCountReport {
        per_layer,
        trainable,
        non_trainable,
    })
}

/// Allocates zeroed parameters (batch-norm gets its conventional defaults)
/// aligned with the layer list.
pub fn alloc_params<T: Scalar>(
    input_shape: &[usize],
    layers: &[LayerSpec],
) -> Result<Vec<LayerParams<T>>> {
    let mut params = Vec::with_capacity(layers.len());
    let mut cur = input_shape.to_vec();
    for layer in layers {
        let c_in = *cur.last().expect("shapes are non-empty");
        let p = match &layer.kind {
            LayerKind::Conv2d {
                kernel,
                out_channels,
                padding,
                ..
            } => LayerParams::Conv(ConvParams::new_2d(
                Tensor::zeros(&[kernel[0], kernel[1], c_in, *out_channels])?,
                Tensor::zeros(&[*out_channels])?,
                *padding,
            )?),
            LayerKind::Conv3d {
                kernel,
                out_channels,
                padding,
                ..
            } => LayerParams::Conv(ConvParams::new_3d(
                Tensor::zeros(&[kernel[0], kernel[1], kernel[2], c_in, *out_channels])?,
                Tensor::zeros(&[*out_channels])?,
                *padding,
            )?),
            LayerKind::BatchNorm => LayerParams::BatchNorm(BatchNormParams::new(c_in)?),
            LayerKind::Dense { units, .. } => LayerParams::Dense {
                weights: Tensor::zeros(&[c_in, *units])?,
                bias: Tensor::zeros(&[*units])?,
            },
            _ => LayerParams::None,
        };
        params.push(p);
        cur = layer_output_shape(layer, &cur)?;
    }
    Ok(params)
}
