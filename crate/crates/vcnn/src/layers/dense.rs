//! Fully connected layer: y = xW + b for a rank-1 input.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

fn check_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<(usize, usize)> {
    if x.rank() != 1 || w.rank() != 2 {
        return Err(Error::Shape(format!(
            "dense expects input [n_in] and weights [n_in, n_out], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
    if x.len() != n_in {
        return Err(Error::Shape(format!(
            "dense input length {} does not match weights n_in {n_in}",
            x.len()
        )));
    }
    if let Some(b) = b {
        if b.shape() != [n_out] {
            return Err(Error::Shape(format!(
                "dense bias shape {:?} does not match n_out {n_out}",
                b.shape()
            )));
        }
    }
    Ok((n_in, n_out))
}

pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n_in, n_out) = check_dims(x, w, Some(b))?;
    let mut out = b.data().to_vec();
    let wd = w.data();
    for (i, &xv) in x.data().iter().enumerate().take(n_in) {
        let wrow = &wd[i * n_out..(i + 1) * n_out];
        for (o, &wv) in out.iter_mut().zip(wrow) {
            *o += xv * wv;
        }
    }
    Tensor::vector(out)
}

/// Returns (grad_x, grad_w, grad_b).
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n_in, n_out) = check_dims(x, w, None)?;
    if grad_out.shape() != [n_out] {
        return Err(Error::Contract(format!(
            "dense backward: gradient shape {:?} does not match n_out {n_out}",
            grad_out.shape()
        )));
    }
    let g = grad_out.data();
    let wd = w.data();

    let mut grad_x = vec![T::zero(); n_in];
    let mut grad_w = vec![T::zero(); n_in * n_out];
    for i in 0..n_in {
        let wrow = &wd[i * n_out..(i + 1) * n_out];
        let mut acc = T::zero();
        for (&wv, &gv) in wrow.iter().zip(g) {
            acc += wv * gv;
        }
        grad_x[i] = acc;

        let xv = x.data()[i];
        let gw_row = &mut grad_w[i * n_out..(i + 1) * n_out];
        for (gw, &gv) in gw_row.iter_mut().zip(g) {
            *gw = xv * gv;
        }
    }

    Ok((
        Tensor::vector(grad_x)?,
        Tensor::new(vec![n_in, n_out], grad_w)?,
        Tensor::vector(g.to_vec())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_return_the_bias() {
        let x = Tensor::<f64>::random_uniform(&[5], -1.0, 1.0, 2).unwrap();
        let w = Tensor::<f64>::zeros(&[5, 3]).unwrap();
        let b = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap(), b);
    }

    #[test]
    fn hand_example() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::vector(vec![10.0, 20.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[11.0, 22.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let x = Tensor::<f64>::zeros(&[4]).unwrap();
        let w = Tensor::<f64>::zeros(&[5, 3]).unwrap();
        let b = Tensor::<f64>::zeros(&[3]).unwrap();
        assert!(matches!(dense_forward(&x, &w, &b), Err(Error::Shape(_))));
    }
}
