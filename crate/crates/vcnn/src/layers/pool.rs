//! Max-pooling over the spatial axes of a channels-last tensor.
//!
//! Works for both `[h, w, c]` and `[d, h, w, c]` inputs; pool sizes and
//! strides are given per spatial axis. Windows that would overrun the input
//! are dropped (floor semantics). The cache records the flat input index of
//! each window maximum; ties resolve to the first index in row-major scan
//! order so backward is deterministic.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<u32>,
}

impl MaxPoolCache {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    pool: &[usize],
    strides: &[usize],
) -> Result<(Tensor<T>, MaxPoolCache)> {
    let rank = x.rank();
    if rank < 2 {
        return Err(Error::Shape(format!(
            "maxpool input must have spatial axes plus a channel axis, got {:?}",
            x.shape()
        )));
    }
    let spatial = rank - 1;
    if pool.len() != spatial || strides.len() != spatial {
        return Err(Error::Shape(format!(
            "maxpool expects {spatial} pool sizes and strides, got {} and {}",
            pool.len(),
            strides.len()
        )));
    }
    if pool.iter().any(|&p| p == 0) || strides.iter().any(|&s| s == 0) {
        return Err(Error::Argument("pool sizes and strides must be >= 1".into()));
    }
    let in_sp = &x.shape()[..spatial];
    let channels = x.shape()[spatial];
    let mut out_sp = Vec::with_capacity(spatial);
    for axis in 0..spatial {
        if pool[axis] > in_sp[axis] {
            return Err(Error::Shape(format!(
                "pool size {} exceeds input size {} on axis {axis}",
                pool[axis], in_sp[axis]
            )));
        }
        out_sp.push((in_sp[axis] - pool[axis]) / strides[axis] + 1);
    }

    // Row-major strides (in elements) of the spatial axes of the input.
    let mut in_strides = vec![channels; spatial];
    for axis in (0..spatial.saturating_sub(1)).rev() {
        in_strides[axis] = in_strides[axis + 1] * in_sp[axis + 1];
    }

    let n_out_sp: usize = out_sp.iter().product();
    let mut out = vec![T::zero(); n_out_sp * channels];
    let mut argmax = vec![0u32; n_out_sp * channels];
    let data = x.data();

    let mut coord = vec![0usize; spatial];
    for flat in 0..n_out_sp {
        let base: usize = coord
            .iter()
            .zip(strides)
            .zip(&in_strides)
            .map(|((&o, &st), &is)| o * st * is)
            .sum();
        for ch in 0..channels {
            let mut best = data[base + ch];
            let mut best_idx = base + ch;
            let mut win = vec![0usize; spatial];
            'window: loop {
                // Advance the window odometer; the all-zero offset was taken
                // as the initial best above.
                let mut axis = spatial;
                loop {
                    if axis == 0 {
                        break 'window;
                    }
                    axis -= 1;
                    win[axis] += 1;
                    if win[axis] < pool[axis] {
                        break;
                    }
                    win[axis] = 0;
                }
                let off: usize = base
                    + ch
                    + win
                        .iter()
                        .zip(&in_strides)
                        .map(|(&wo, &is)| wo * is)
                        .sum::<usize>();
                let v = data[off];
                if v > best {
                    best = v;
                    best_idx = off;
                }
            }
            out[flat * channels + ch] = best;
            argmax[flat * channels + ch] = best_idx as u32;
        }
        // Advance the output coordinate odometer.
        let mut axis = spatial;
        while axis > 0 {
            axis -= 1;
            coord[axis] += 1;
            if coord[axis] < out_sp[axis] {
                break;
            }
            coord[axis] = 0;
        }
    }

    let mut out_shape = out_sp;
    out_shape.push(channels);
    Ok((
        Tensor::new(out_shape, out)?,
        MaxPoolCache {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each output gradient to the input position that produced the max.
pub fn maxpool_backward<T: Scalar>(
    cache: &MaxPoolCache,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::Contract(format!(
            "maxpool backward: gradient has {} elements, cache expects {}",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut grad_in = Tensor::zeros(&cache.input_shape)?;
    let gd = grad_in.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gd[idx as usize] += g;
    }
    Ok(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_shapes_match_reference_rows() {
        let x3 = Tensor::<f32>::zeros(&[80, 80, 80, 32]).unwrap();
        let (y3, _) = maxpool_forward(&x3, &[1, 2, 2], &[1, 2, 2]).unwrap();
        assert_eq!(y3.shape(), &[80, 40, 40, 32]);

        let x2 = Tensor::<f32>::zeros(&[80, 80, 64]).unwrap();
        let (y2, _) = maxpool_forward(&x2, &[2, 2], &[2, 2]).unwrap();
        assert_eq!(y2.shape(), &[40, 40, 64]);
    }

    #[test]
    fn constant_input_pools_to_the_same_constant() {
        let x = Tensor::full(&[4, 6, 3], 2.5f64).unwrap();
        let (y, _) = maxpool_forward(&x, &[2, 2], &[2, 2]).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn overrunning_windows_are_dropped() {
        let x = Tensor::<f64>::zeros(&[7, 5, 1]).unwrap();
        let (y, _) = maxpool_forward(&x, &[2, 2], &[2, 2]).unwrap();
        assert_eq!(y.shape(), &[3, 2, 1]);
    }

    #[test]
    fn pool_larger_than_input_is_an_error() {
        let x = Tensor::<f64>::zeros(&[2, 2, 1]).unwrap();
        assert!(matches!(
            maxpool_forward(&x, &[3, 2], &[1, 1]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn backward_routes_to_argmax_and_conserves_sum() {
        let x = Tensor::new(
            vec![2, 4, 1],
            vec![1.0, 9.0, 2.0, 3.0, 4.0, 5.0, 8.0, 7.0],
        )
        .unwrap();
        let (y, cache) = maxpool_forward(&x, &[2, 2], &[2, 2]).unwrap();
        assert_eq!(y.data(), &[9.0, 8.0]);
        let g = Tensor::vector(vec![0.5, 2.0]).unwrap().reshape(&[1, 2, 1]).unwrap();
        let gx = maxpool_backward(&cache, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0]);
        // Disjoint windows: total gradient is conserved.
        let sum_in: f64 = gx.data().iter().sum();
        let sum_out: f64 = g.data().iter().sum();
        assert_eq!(sum_in, sum_out);
    }

    #[test]
    fn tie_breaks_to_first_row_major_index() {
        let x = Tensor::new(vec![2, 2, 1], vec![3.0, 3.0, 3.0, 3.0]).unwrap();
        let (_, cache) = maxpool_forward(&x, &[2, 2], &[2, 2]).unwrap();
        let g = Tensor::full(&[1, 1, 1], 1.0f64).unwrap();
        let gx = maxpool_backward(&cache, &g).unwrap();
        assert_eq!(gx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
