//! Batch normalization over the channel (last) axis.
//!
//! Train mode normalizes each channel by the mean and population variance
//! taken over the batch and all spatial positions, then scales by gamma and
//! shifts by beta, and updates the moving statistics with the configured
//! momentum. Eval mode normalizes with the moving statistics alone.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl<T: Scalar> BatchNormParams<T> {
    /// Fresh parameters: gamma 1, beta 0, moving mean 0, moving var 1,
    /// momentum 0.99, epsilon 1e-3.
    pub fn new(channels: usize) -> Result<Self> {
        Self::with_config(channels, 0.99, 1e-3)
    }

    pub fn with_config(channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(0.0 < momentum && momentum < 1.0) {
            return Err(Error::Argument(format!(
                "batchnorm momentum must be in (0, 1), got {momentum}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(Error::Argument(format!(
                "batchnorm epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            gamma: Tensor::full(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            moving_mean: Tensor::zeros(&[channels])?,
            moving_var: Tensor::full(&[channels], T::one())?,
            momentum,
            epsilon,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Batch statistics actually used by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    mean: Vec<T>,
    var: Vec<T>,
}

fn check_batch<T: Scalar>(xs: &[Tensor<T>], channels: usize) -> Result<usize> {
    if xs.is_empty() {
        return Err(Error::Argument("batchnorm requires a non-empty batch".into()));
    }
    let shape = xs[0].shape();
    if *shape.last().expect("rank >= 1") != channels {
        return Err(Error::Shape(format!(
            "batchnorm input channel axis {} does not match parameter channels {channels}",
            shape.last().unwrap()
        )));
    }
    for x in xs {
        if x.shape() != shape {
            return Err(Error::Shape(format!(
                "batchnorm batch elements disagree: {:?} vs {shape:?}",
                x.shape()
            )));
        }
    }
    Ok(xs[0].len() / channels)
}

/// Per-channel mean and population variance over batch and spatial axes.
fn batch_stats<T: Scalar>(xs: &[Tensor<T>], channels: usize, spatial: usize) -> (Vec<T>, Vec<T>) {
    let n = T::from_f64((xs.len() * spatial) as f64);
    let mut mean = vec![T::zero(); channels];
    for x in xs {
        for row in x.data().chunks_exact(channels) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![T::zero(); channels];
    for x in xs {
        for row in x.data().chunks_exact(channels) {
            for ((va, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *va += d * d;
            }
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

fn normalize_with<T: Scalar>(
    xs: &[Tensor<T>],
    mean: &[T],
    var: &[T],
    p: &BatchNormParams<T>,
) -> Vec<Tensor<T>> {
    let channels = p.channels();
    let eps = T::from_f64(p.epsilon);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gamma = p.gamma.data();
    let beta = p.beta.data();
    xs.iter()
        .map(|x| {
            let mut out = x.clone();
            for row in out.data_mut().chunks_exact_mut(channels) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = gamma[j] * (*v - mean[j]) * inv_std[j] + beta[j];
                }
            }
            out
        })
        .collect()
}

pub fn batchnorm_forward_train<T: Scalar>(
    xs: &[Tensor<T>],
    p: &mut BatchNormParams<T>,
) -> Result<(Vec<Tensor<T>>, BatchNormCache<T>)> {
    let channels = p.channels();
    let spatial = check_batch(xs, channels)?;
    let (mean, var) = batch_stats(xs, channels, spatial);
    let outs = normalize_with(xs, &mean, &var, p);

    let momentum = T::from_f64(p.momentum);
    let one_minus = T::one() - momentum;
    for (mm, &m) in p.moving_mean.data_mut().iter_mut().zip(&mean) {
        *mm = *mm * momentum + m * one_minus;
    }
    for (mv, &v) in p.moving_var.data_mut().iter_mut().zip(&var) {
        *mv = *mv * momentum + v * one_minus;
    }

    Ok((outs, BatchNormCache { mean, var }))
}

pub fn batchnorm_forward_eval<T: Scalar>(
    xs: &[Tensor<T>],
    p: &BatchNormParams<T>,
) -> Result<Vec<Tensor<T>>> {
    let channels = p.channels();
    check_batch(xs, channels)?;
    Ok(normalize_with(
        xs,
        p.moving_mean.data(),
        p.moving_var.data(),
        p,
    ))
}

/// Train-mode backward; returns (grad_inputs, grad_gamma, grad_beta).
pub fn batchnorm_backward<T: Scalar>(
    xs: &[Tensor<T>],
    p: &BatchNormParams<T>,
    cache: &BatchNormCache<T>,
    grads: &[Tensor<T>],
) -> Result<(Vec<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let channels = p.channels();
    let spatial = check_batch(xs, channels)?;
    if grads.len() != xs.len() {
        return Err(Error::Contract(format!(
            "batchnorm backward: {} gradients for a batch of {}",
            grads.len(),
            xs.len()
        )));
    }
    for (g, x) in grads.iter().zip(xs) {
        if g.shape() != x.shape() {
            return Err(Error::Contract(format!(
                "batchnorm backward: gradient shape {:?} does not match input {:?}",
                g.shape(),
                x.shape()
            )));
        }
    }

    let n = T::from_f64((xs.len() * spatial) as f64);
    let eps = T::from_f64(p.epsilon);
    let inv_std: Vec<T> = cache
        .var
        .iter()
        .map(|&v| T::one() / (v + eps).sqrt())
        .collect();
    let gamma = p.gamma.data();

    let mut grad_gamma = vec![T::zero(); channels];
    let mut grad_beta = vec![T::zero(); channels];
    let mut dvar = vec![T::zero(); channels];
    let mut dmean = vec![T::zero(); channels];
    let mut sum_xc = vec![T::zero(); channels];

    let half = T::from_f64(0.5);
    for (x, g) in xs.iter().zip(grads) {
        for (xrow, grow) in x
            .data()
            .chunks_exact(channels)
            .zip(g.data().chunks_exact(channels))
        {
            for j in 0..channels {
                let xc = xrow[j] - cache.mean[j];
                let gv = grow[j];
                let dxhat = gv * gamma[j];
                grad_beta[j] += gv;
                grad_gamma[j] += gv * xc * inv_std[j];
                dvar[j] -= dxhat * xc * half * inv_std[j] * inv_std[j] * inv_std[j];
                dmean[j] -= dxhat * inv_std[j];
                sum_xc[j] += xc;
            }
        }
    }
    let two = T::from_f64(2.0);
    for j in 0..channels {
        dmean[j] += dvar[j] * (-two * sum_xc[j]) / n;
    }

    let grad_xs = xs
        .iter()
        .zip(grads)
        .map(|(x, g)| {
            let mut out = x.clone();
            for (orow, grow) in out
                .data_mut()
                .chunks_exact_mut(channels)
                .zip(g.data().chunks_exact(channels))
            {
                for j in 0..channels {
                    let xc = orow[j] - cache.mean[j];
                    let dxhat = grow[j] * gamma[j];
                    orow[j] = dxhat * inv_std[j] + dvar[j] * two * xc / n + dmean[j] / n;
                }
            }
            out
        })
        .collect();

    Ok((
        grad_xs,
        Tensor::vector(grad_gamma)?,
        Tensor::vector(grad_beta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(seed: u64, n: usize, shape: &[usize]) -> Vec<Tensor<f64>> {
        (0..n)
            .map(|i| Tensor::random_uniform(shape, -2.0, 3.0, seed + i as u64).unwrap())
            .collect()
    }

    #[test]
    fn train_output_is_normalized_per_channel() {
        let xs = batch(1, 3, &[4, 5, 2]);
        let mut p = BatchNormParams::<f64>::new(2).unwrap();
        let (ys, _) = batchnorm_forward_train(&xs, &mut p).unwrap();
        for j in 0..2 {
            let vals: Vec<f64> = ys
                .iter()
                .flat_map(|y| y.data().chunks_exact(2).map(move |r| r[j]))
                .collect();
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel {j} mean {mean}");
            // Variance is damped slightly below 1 by epsilon.
            assert!((var - 1.0).abs() < 2e-3, "channel {j} var {var}");
        }
    }

    #[test]
    fn eval_with_exact_batch_stats_matches_train() {
        let xs = batch(7, 2, &[3, 3, 2]);
        let mut p = BatchNormParams::<f64>::new(2).unwrap();
        let (train_out, cache) = batchnorm_forward_train(&xs, &mut p).unwrap();

        let mut p_eval = BatchNormParams::<f64>::new(2).unwrap();
        p_eval.moving_mean = Tensor::vector(cache.mean.clone()).unwrap();
        p_eval.moving_var = Tensor::vector(cache.var.clone()).unwrap();
        let eval_out = batchnorm_forward_eval(&xs, &p_eval).unwrap();

        for (t, e) in train_out.iter().zip(&eval_out) {
            for (a, b) in t.data().iter().zip(e.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matches_straight_line_formula_oracle() {
        let xs = batch(11, 4, &[2, 3]);
        let mut p = BatchNormParams::<f64>::with_config(3, 0.9, 1e-5).unwrap();
        p.gamma = Tensor::vector(vec![1.5, 0.5, 2.0]).unwrap();
        p.beta = Tensor::vector(vec![-0.25, 0.75, 0.0]).unwrap();
        let (ys, _) = batchnorm_forward_train(&xs, &mut p).unwrap();

        // Oracle: explicit mean/var/normalize, no shared code path.
        for j in 0..3 {
            let vals: Vec<f64> = xs
                .iter()
                .flat_map(|x| x.data().chunks_exact(3).map(move |r| r[j]))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let gamma = p.gamma.data()[j];
            let beta = p.beta.data()[j];
            let mut k = 0;
            for x in &xs {
                for (row, yrow) in x
                    .data()
                    .chunks_exact(3)
                    .zip(ys[k].data().chunks_exact(3))
                {
                    let want = gamma * (row[j] - mean) / (var + 1e-5).sqrt() + beta;
                    assert!((yrow[j] - want).abs() < 1e-12);
                }
                k += 1;
            }
        }
    }

    #[test]
    fn moving_stats_update_with_momentum() {
        let xs = vec![Tensor::full(&[4, 1], 2.0f64).unwrap()];
        let mut p = BatchNormParams::<f64>::with_config(1, 0.9, 1e-3).unwrap();
        batchnorm_forward_train(&xs, &mut p).unwrap();
        // mean: 0.9*0 + 0.1*2 = 0.2; var: 0.9*1 + 0.1*0 = 0.9
        assert!((p.moving_mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((p.moving_var.data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_an_argument_error() {
        let mut p = BatchNormParams::<f64>::new(2).unwrap();
        let empty: Vec<Tensor<f64>> = vec![];
        assert!(matches!(
            batchnorm_forward_train(&empty, &mut p),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn trainable_and_non_trainable_counts_are_2c_each() {
        let p = BatchNormParams::<f32>::new(224).unwrap();
        assert_eq!(p.gamma.len() + p.beta.len(), 448);
        assert_eq!(p.moving_mean.len() + p.moving_var.len(), 448);
    }
}
