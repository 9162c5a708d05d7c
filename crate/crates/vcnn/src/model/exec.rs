//! Batch execution: train-mode forward with caches, eval-mode forward, and
//! the backward pass producing per-layer parameter gradients.
//!
//! The batch axis lives here, not in tensors: a batch is a slice of sample
//! tensors. Per-sample layers run in parallel across the batch with one task
//! per sample; batch normalization couples the batch and runs jointly.
//! Parameter gradients are reduced over samples in index order, so results
//! do not depend on the thread count.

use super::{LayerKind, LayerParams, Model};
use crate::error::{Error, Result};
use crate::layers::{
    batchnorm_backward, batchnorm_forward_eval, batchnorm_forward_train, conv2d_backward,
    conv2d_forward, conv3d_backward, conv3d_forward, dense_backward, dense_forward,
    dropout_backward, dropout_forward, maxpool_backward, maxpool_forward, relu, relu_backward,
    softmax, BatchNormCache, DropoutMask, MaxPoolCache, Mode,
};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Everything a train-mode forward pass saves for backward: the input batch
/// of every layer plus layer-specific extras (argmax positions, dropout
/// masks, batch statistics).
pub struct BatchCaches<T: Scalar> {
    /// `activations[i]` is the input batch of layer `i`;
    /// `activations[layers.len()]` is the logits batch.
    pub(crate) activations: Vec<Vec<Tensor<T>>>,
    pub(crate) extras: Vec<Extra<T>>,
}

pub(crate) enum Extra<T: Scalar> {
    None,
    Pool(Vec<MaxPoolCache>),
    Dropout(Vec<DropoutMask>),
    BatchNorm(BatchNormCache<T>),
}

/// Per-layer parameter gradients, aligned with the model's layer list.
pub struct Gradients<T: Scalar> {
    pub(crate) layers: Vec<LayerGrads<T>>,
}

pub enum LayerGrads<T: Scalar> {
    None,
    /// Gradient of the layer's (weights, bias) pair - kernel and bias for
    /// convolutions, gamma and beta for batch norm, W and b for dense.
    Params {
        weights: Tensor<T>,
        bias: Tensor<T>,
    },
}

impl<T: Scalar> Gradients<T> {
    /// Gradient tensors in the same order as [`Model::trainable_tensors`].
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for g in &self.layers {
            if let LayerGrads::Params { weights, bias } = g {
                out.push(weights);
                out.push(bias);
            }
        }
        out
    }
}

fn check_batch_inputs<T: Scalar>(xs: &[Tensor<T>], input_shape: &[usize]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Argument("forward requires a non-empty batch".into()));
    }
    for x in xs {
        if x.shape() != input_shape {
            return Err(Error::Shape(format!(
                "input shape {:?} does not match model input {input_shape:?}",
                x.shape()
            )));
        }
    }
    Ok(())
}

/// Sums per-sample (weights, bias) gradient pairs in sample order.
fn reduce_pairs<T: Scalar>(pairs: Vec<(Tensor<T>, Tensor<T>)>) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut it = pairs.into_iter();
    let (mut w, mut b) = it.next().expect("batch is non-empty");
    for (wi, bi) in it {
        w.add_in_place(&wi)?;
        b.add_in_place(&bi)?;
    }
    Ok((w, b))
}

impl<T: Scalar> Model<T> {
    /// Train-mode forward over a batch. Dropout layer `k` for sample `j`
    /// draws from `rngs[j]`, so the mask stream is deterministic per sample
    /// regardless of scheduling.
    pub fn forward_train(
        &mut self,
        xs: &[Tensor<T>],
        rngs: &mut [ChaCha8Rng],
    ) -> Result<(Vec<Tensor<T>>, BatchCaches<T>)> {
        check_batch_inputs(xs, &self.input_shape)?;
        if rngs.len() != xs.len() {
            return Err(Error::Argument(format!(
                "{} dropout streams for a batch of {}",
                rngs.len(),
                xs.len()
            )));
        }
        let layers = &self.layers;
        let params = &mut self.params;

        let mut activations: Vec<Vec<Tensor<T>>> = vec![xs.to_vec()];
        let mut extras: Vec<Extra<T>> = Vec::with_capacity(layers.len());

        for (i, layer) in layers.iter().enumerate() {
            let inputs = activations.last().expect("seeded with the input batch");
            let (outputs, extra) = match (&layer.kind, &mut params[i]) {
                (LayerKind::Conv2d { relu: act, .. }, LayerParams::Conv(p)) => {
                    let p = &*p;
                    let outs = inputs
                        .par_iter()
                        .map(|x| {
                            let y = conv2d_forward(x, p)?;
                            Ok(if *act { relu(&y) } else { y })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (outs, Extra::None)
                }
                (LayerKind::Conv3d { relu: act, .. }, LayerParams::Conv(p)) => {
                    let p = &*p;
                    let outs = inputs
                        .par_iter()
                        .map(|x| {
                            let y = conv3d_forward(x, p)?;
                            Ok(if *act { relu(&y) } else { y })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (outs, Extra::None)
                }
                (LayerKind::BatchNorm, LayerParams::BatchNorm(p)) => {
                    let (outs, cache) = batchnorm_forward_train(inputs, p)?;
                    (outs, Extra::BatchNorm(cache))
                }
                (LayerKind::MaxPool { pool, strides }, _) => {
                    let pairs = inputs
                        .par_iter()
                        .map(|x| maxpool_forward(x, pool, strides))
                        .collect::<Result<Vec<_>>>()?;
                    let (outs, caches) = pairs.into_iter().unzip();
                    (outs, Extra::Pool(caches))
                }
                (LayerKind::Dropout { rate }, _) => {
                    let pairs = inputs
                        .par_iter()
                        .zip(rngs.par_iter_mut())
                        .map(|(x, rng)| dropout_forward(x, *rate, Mode::Train, rng))
                        .collect::<Result<Vec<_>>>()?;
                    let (outs, masks) = pairs.into_iter().unzip();
                    (outs, Extra::Dropout(masks))
                }
                (LayerKind::Relu, _) => {
                    (inputs.par_iter().map(relu).collect(), Extra::None)
                }
                (LayerKind::Flatten, _) => {
                    let outs = inputs
                        .par_iter()
                        .map(|x| x.reshape(&[x.len()]))
                        .collect::<Result<Vec<_>>>()?;
                    (outs, Extra::None)
                }
                (LayerKind::Dense { relu: act, .. }, LayerParams::Dense { weights, bias }) => {
                    let (w, b) = (&*weights, &*bias);
                    let outs = inputs
                        .par_iter()
                        .map(|x| {
                            let y = dense_forward(x, w, b)?;
                            Ok(if *act { relu(&y) } else { y })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (outs, Extra::None)
                }
                (kind, params) => {
                    return Err(Error::Contract(format!(
                        "layer \"{}\": kind {kind:?} does not match allocated params {params:?}",
                        layer.name
                    )))
                }
            };
            activations.push(outputs);
            extras.push(extra);
        }

        let logits = activations.last().expect("non-empty").clone();
        Ok((
            logits,
            BatchCaches {
                activations,
                extras,
            },
        ))
    }

    /// Eval-mode forward for one sample: dropout is the identity and batch
    /// norm uses its moving statistics, so this is a pure function of
    /// (parameters, input).
    pub fn forward_eval_single(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        check_batch_inputs(std::slice::from_ref(x), &self.input_shape)?;
        let mut cur = x.clone();
        for (layer, params) in self.layers.iter().zip(&self.params) {
            cur = match (&layer.kind, params) {
                (LayerKind::Conv2d { relu: act, .. }, LayerParams::Conv(p)) => {
                    let y = conv2d_forward(&cur, p)?;
                    if *act {
                        relu(&y)
                    } else {
                        y
                    }
                }
                (LayerKind::Conv3d { relu: act, .. }, LayerParams::Conv(p)) => {
                    let y = conv3d_forward(&cur, p)?;
                    if *act {
                        relu(&y)
                    } else {
                        y
                    }
                }
                (LayerKind::BatchNorm, LayerParams::BatchNorm(p)) => {
                    batchnorm_forward_eval(std::slice::from_ref(&cur), p)?
                        .pop()
                        .expect("batch of one")
                }
                (LayerKind::MaxPool { pool, strides }, _) => maxpool_forward(&cur, pool, strides)?.0,
                (LayerKind::Dropout { .. }, _) => cur,
                (LayerKind::Relu, _) => relu(&cur),
                (LayerKind::Flatten, _) => cur.reshape(&[cur.len()])?,
                (LayerKind::Dense { relu: act, .. }, LayerParams::Dense { weights, bias }) => {
                    let y = dense_forward(&cur, weights, bias)?;
                    if *act {
                        relu(&y)
                    } else {
                        y
                    }
                }
                (kind, params) => {
                    return Err(Error::Contract(format!(
                        "layer \"{}\": kind {kind:?} does not match allocated params {params:?}",
                        layer.name
                    )))
                }
            };
        }
        Ok(cur)
    }

    /// Eval-mode logits for a batch; samples run in parallel.
    pub fn forward_eval(&self, xs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        check_batch_inputs(xs, &self.input_shape)?;
        xs.par_iter().map(|x| self.forward_eval_single(x)).collect()
    }

    /// Predicted class index (argmax of the logits).
    pub fn predict(&self, x: &Tensor<T>) -> Result<usize> {
        Ok(self.forward_eval_single(x)?.argmax())
    }

    /// Predicted class index plus softmax probabilities.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<(usize, Tensor<T>)> {
        let logits = self.forward_eval_single(x)?;
        Ok((logits.argmax(), softmax(&logits)))
    }

    /// Backward pass over the caches of the matching [`Model::forward_train`]
    /// call. Returns parameter gradients summed over the batch.
    pub fn backward(
        &self,
        caches: &BatchCaches<T>,
        grad_logits: Vec<Tensor<T>>,
    ) -> Result<Gradients<T>> {
        let batch = caches.activations[0].len();
        if grad_logits.len() != batch {
            return Err(Error::Contract(format!(
                "{} logit gradients for a batch of {batch}",
                grad_logits.len()
            )));
        }
        if caches.activations.len() != self.layers.len() + 1 {
            return Err(Error::Contract(
                "caches do not match this model's layer count".into(),
            ));
        }

        let mut grad = grad_logits;
        let mut layer_grads: Vec<LayerGrads<T>> = Vec::with_capacity(self.layers.len());

        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let inputs = &caches.activations[i];
            let outputs = &caches.activations[i + 1];
            let (next_grad, lg) = match (&layer.kind, &self.params[i], &caches.extras[i]) {
                (LayerKind::Conv2d { relu: act, .. }, LayerParams::Conv(p), _) => {
                    if *act {
                        grad = outputs
                            .par_iter()
                            .zip(grad.into_par_iter())
                            .map(|(out, g)| relu_backward(out, &g))
                            .collect::<Result<Vec<_>>>()?;
                    }
                    let triples = inputs
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(x, g)| conv2d_backward(x, p, g))
                        .collect::<Result<Vec<_>>>()?;
                    let mut gxs = Vec::with_capacity(batch);
                    let mut pairs = Vec::with_capacity(batch);
                    for (gx, gk, gb) in triples {
                        gxs.push(gx);
                        pairs.push((gk, gb));
                    }
                    let (gw, gb) = reduce_pairs(pairs)?;
                    (gxs, LayerGrads::Params { weights: gw, bias: gb })
                }
                (LayerKind::Conv3d { relu: act, .. }, LayerParams::Conv(p), _) => {
                    if *act {
                        grad = outputs
                            .par_iter()
                            .zip(grad.into_par_iter())
                            .map(|(out, g)| relu_backward(out, &g))
                            .collect::<Result<Vec<_>>>()?;
                    }
                    let triples = inputs
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(x, g)| conv3d_backward(x, p, g))
                        .collect::<Result<Vec<_>>>()?;
                    let mut gxs = Vec::with_capacity(batch);
                    let mut pairs = Vec::with_capacity(batch);
                    for (gx, gk, gb) in triples {
                        gxs.push(gx);
                        pairs.push((gk, gb));
                    }
                    let (gw, gb) = reduce_pairs(pairs)?;
                    (gxs, LayerGrads::Params { weights: gw, bias: gb })
                }
                (LayerKind::BatchNorm, LayerParams::BatchNorm(p), Extra::BatchNorm(cache)) => {
                    let (gxs, gg, gb) = batchnorm_backward(inputs, p, cache, &grad)?;
                    (gxs, LayerGrads::Params { weights: gg, bias: gb })
                }
                (LayerKind::MaxPool { .. }, _, Extra::Pool(pool_caches)) => {
                    let gxs = pool_caches
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(c, g)| maxpool_backward(c, g))
                        .collect::<Result<Vec<_>>>()?;
                    (gxs, LayerGrads::None)
                }
                (LayerKind::Dropout { rate }, _, Extra::Dropout(masks)) => {
                    let gxs = masks
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(m, g)| dropout_backward(m, *rate, g))
                        .collect::<Result<Vec<_>>>()?;
                    (gxs, LayerGrads::None)
                }
                (LayerKind::Relu, _, _) => {
                    let gxs = outputs
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(out, g)| relu_backward(out, g))
                        .collect::<Result<Vec<_>>>()?;
                    (gxs, LayerGrads::None)
                }
                (LayerKind::Flatten, _, _) => {
                    let gxs = inputs
                        .iter()
                        .zip(&grad)
                        .map(|(x, g)| g.reshape(x.shape()))
                        .collect::<Result<Vec<_>>>()?;
                    (gxs, LayerGrads::None)
                }
                (LayerKind::Dense { relu: act, .. }, LayerParams::Dense { weights, .. }, _) => {
                    if *act {
                        grad = outputs
                            .par_iter()
                            .zip(grad.into_par_iter())
                            .map(|(out, g)| relu_backward(out, &g))
                            .collect::<Result<Vec<_>>>()?;
                    }
                    let triples = inputs
                        .par_iter()
                        .zip(grad.par_iter())
                        .map(|(x, g)| dense_backward(x, weights, g))
                        .collect::<Result<Vec<_>>>()?;
                    let mut gxs = Vec::with_capacity(batch);
                    let mut pairs = Vec::with_capacity(batch);
                    for (gx, gw, gb) in triples {
                        gxs.push(gx);
                        pairs.push((gw, gb));
                    }
                    let (gw, gb) = reduce_pairs(pairs)?;
                    (gxs, LayerGrads::Params { weights: gw, bias: gb })
                }
                (kind, _, _) => {
                    return Err(Error::Contract(format!(
                        "layer \"{}\": caches do not match kind {kind:?}",
                        layer.name
                    )))
                }
            };
            grad = next_grad;
            layer_grads.push(lg);
        }

        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
        })
    }
}
