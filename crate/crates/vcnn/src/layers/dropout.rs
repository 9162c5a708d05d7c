//! Inverted dropout: train mode zeroes each element with probability `rate`
//! and scales survivors by 1/(1-rate), so eval mode is a pure identity.

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Keep/drop decisions of one forward pass. Eval passes keep everything.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    keep: Vec<bool>,
}

impl DropoutMask {
    pub fn kept(&self) -> &[bool] {
        &self.keep
    }
}

pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<T>, DropoutMask)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!(
            "dropout rate must be in [0, 1), got {rate}"
        )));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((
            x.clone(),
            DropoutMask {
                keep: vec![true; x.len()],
            },
        ));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let mut keep = Vec::with_capacity(x.len());
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let k = rng.gen::<f64>() >= rate;
            keep.push(k);
            if k {
                v * scale
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, DropoutMask { keep }))
}

pub fn dropout_backward<T: Scalar>(
    mask: &DropoutMask,
    rate: f64,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != mask.keep.len() {
        return Err(Error::Contract(format!(
            "dropout backward: gradient has {} elements, mask has {}",
            grad_out.len(),
            mask.keep.len()
        )));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let data = grad_out
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&g, &k)| if k { g * scale } else { T::zero() })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rate_zero_is_identity_in_both_modes() {
        let x = Tensor::<f64>::random_uniform(&[50], -1.0, 1.0, 1).unwrap();
        for mode in [Mode::Train, Mode::Eval] {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (y, _) = dropout_forward(&x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(y, x);
        }
    }

    #[test]
    fn eval_mode_is_identity_at_any_rate() {
        let x = Tensor::<f64>::random_uniform(&[50], -1.0, 1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (y, _) = dropout_forward(&x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn inverted_scaling_preserves_the_mean() {
        // 3 sigma of the kept fraction over 100k draws: ~0.004 < 0.01.
        let x = Tensor::full(&[100_000], 1.0f64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (y, _) = dropout_forward(&x, 0.2, Mode::Train, &mut rng).unwrap();
        let mean = y.sum() / 100_000.0;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn same_seed_gives_the_same_mask() {
        let x = Tensor::<f64>::random_uniform(&[200], -1.0, 1.0, 3).unwrap();
        let mut rng1 = ChaCha8Rng::seed_from_u64(42);
        let mut rng2 = ChaCha8Rng::seed_from_u64(42);
        let (y1, m1) = dropout_forward(&x, 0.4, Mode::Train, &mut rng1).unwrap();
        let (y2, m2) = dropout_forward(&x, 0.4, Mode::Train, &mut rng2).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(m1.kept(), m2.kept());
    }

    #[test]
    fn bad_rate_is_an_argument_error() {
        let x = Tensor::<f64>::zeros(&[4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            dropout_forward(&x, 1.0, Mode::Train, &mut rng),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            dropout_forward(&x, -0.1, Mode::Train, &mut rng),
            Err(Error::Argument(_))
        ));
    }
}
