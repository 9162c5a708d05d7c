//! Softmax cross-entropy loss over a batch of logit vectors.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Numerically stable softmax of a rank-1 logit vector.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let max = logits
        .data()
        .iter()
        .cloned()
        .fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.data().iter().map(|&l| (l - max).exp()).collect();
    let denom = exps.iter().fold(T::zero(), |a, &b| a + b);
    Tensor::vector(exps.into_iter().map(|e| e / denom).collect())
        .expect("softmax preserves length")
}

/// Mean cross-entropy of a batch and its analytic logit gradient
/// (softmax - onehot, divided by the batch size). The log-sum-exp is
/// computed with max subtraction so large logits do not overflow.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &[Tensor<T>],
    labels: &[usize],
) -> Result<(T, Vec<Tensor<T>>)> {
    if logits.is_empty() {
        return Err(Error::Argument("loss requires a non-empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} logit vectors but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let classes = logits[0].len();
    let batch = T::from_f64(logits.len() as f64);

    let mut total = T::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (l, &label) in logits.iter().zip(labels) {
        if l.rank() != 1 || l.len() != classes {
            return Err(Error::Shape(format!(
                "logit vectors must all be rank-1 of length {classes}, got {:?}",
                l.shape()
            )));
        }
        if label >= classes {
            return Err(Error::Argument(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let max = l.data().iter().cloned().fold(T::neg_infinity(), T::max);
        let sum_exp = l
            .data()
            .iter()
            .map(|&v| (v - max).exp())
            .fold(T::zero(), |a, b| a + b);
        let lse = max + sum_exp.ln();
        total += lse - l.data()[label];

        let mut g: Vec<T> = l.data().iter().map(|&v| (v - lse).exp() / batch).collect();
        g[label] -= T::one() / batch;
        grads.push(Tensor::vector(g)?);
    }

    Ok((total / batch, grads))
}
