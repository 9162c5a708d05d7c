//! Shared test oracles, independent of the library's computation paths:
//! direct nested-loop convolutions, central finite differences, and a
//! nearest-centroid classifier.

#![allow(dead_code)]

use vcnn::layers::Padding;
use vcnn::niftio::{gen_phantom_with, normalize_intensity, resample, AgeClass, ResampleMethod};
use vcnn::tensor::Tensor;
use vcnn::train::Sample;

/// Begin-pad per axis under the same-padding contract (total k-1, begin
/// floor((k-1)/2)).
fn pad_begin(k: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => (k - 1) / 2,
        Padding::Valid => 0,
    }
}

fn out_extent(input: usize, k: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input,
        Padding::Valid => input - k + 1,
    }
}

/// Direct 6-nested-loop 2D cross-correlation oracle.
pub fn conv2d_oracle(
    x: &Tensor<f64>,
    kernel: &Tensor<f64>,
    bias: &Tensor<f64>,
    padding: Padding,
) -> Tensor<f64> {
    let (h, w, ci) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, _, co) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let (oh, ow) = (out_extent(h, kh, padding), out_extent(w, kw, padding));
    let (pb_h, pb_w) = (pad_begin(kh, padding), pad_begin(kw, padding));

    let mut out = Tensor::zeros(&[oh, ow, co]).unwrap();
    for b in 0..oh {
        for c in 0..ow {
            for o in 0..co {
                let mut acc = bias.data()[o];
                for khi in 0..kh {
                    for kwi in 0..kw {
                        for cii in 0..ci {
                            let iy = b + khi;
                            let iz = c + kwi;
                            if iy < pb_h || iz < pb_w {
                                continue;
                            }
                            let (iy, iz) = (iy - pb_h, iz - pb_w);
                            if iy >= h || iz >= w {
                                continue;
                            }
                            acc += x.get(&[iy, iz, cii]) * kernel.get(&[khi, kwi, cii, o]);
                        }
                    }
                }
                out.set(&[b, c, o], acc);
            }
        }
    }
    out
}

/// Direct 7-nested-loop 3D cross-correlation oracle.
pub fn conv3d_oracle(
    x: &Tensor<f64>,
    kernel: &Tensor<f64>,
    bias: &Tensor<f64>,
    padding: Padding,
) -> Tensor<f64> {
    let (d, h, w, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (kd, kh, kw, _, co) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
        kernel.shape()[4],
    );
    let (od, oh, ow) = (
        out_extent(d, kd, padding),
        out_extent(h, kh, padding),
        out_extent(w, kw, padding),
    );
    let (pb_d, pb_h, pb_w) = (
        pad_begin(kd, padding),
        pad_begin(kh, padding),
        pad_begin(kw, padding),
    );

    let mut out = Tensor::zeros(&[od, oh, ow, co]).unwrap();
    for a in 0..od {
        for b in 0..oh {
            for c in 0..ow {
                for o in 0..co {
                    let mut acc = bias.data()[o];
                    for kdi in 0..kd {
                        for khi in 0..kh {
                            for kwi in 0..kw {
                                for cii in 0..ci {
                                    let ix = a + kdi;
                                    let iy = b + khi;
                                    let iz = c + kwi;
                                    if ix < pb_d || iy < pb_h || iz < pb_w {
                                        continue;
                                    }
                                    let (ix, iy, iz) = (ix - pb_d, iy - pb_h, iz - pb_w);
                                    if ix >= d || iy >= h || iz >= w {
                                        continue;
                                    }
                                    acc += x.get(&[ix, iy, iz, cii])
                                        * kernel.get(&[kdi, khi, kwi, cii, o]);
                                }
                            }
                        }
                    }
                    out.set(&[a, b, c, o], acc);
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "oracle comparison shapes differ");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Projection loss: sum of the element-wise product with a fixed tensor.
pub fn proj_loss(out: &Tensor<f64>, proj: &Tensor<f64>) -> f64 {
    out.hadamard(proj).unwrap().sum()
}

/// Central finite-difference gradient of `loss` with respect to every
/// element of `x`.
pub fn fd_grad(x: &Tensor<f64>, mut loss: impl FnMut(&Tensor<f64>) -> f64, h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let lp = loss(&probe);
        probe.data_mut()[i] = orig - h;
        let lm = loss(&probe);
        probe.data_mut()[i] = orig;
        grad.push((lp - lm) / (2.0 * h));
    }
    grad
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Tensor of pairwise-distinct values with gaps far above the FD step, so
/// max-pool argmax positions cannot flip under perturbation. Values are a
/// shuffled, evenly spaced grid over [-1, 1].
pub fn distinct_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64)
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    values.shuffle(&mut rng);
    Tensor::new(shape.to_vec(), values).unwrap()
}

/// Like `distinct_tensor` but with every |value| >= 0.1, for ReLU inputs
/// that must stay clear of the kink.
pub fn distinct_tensor_off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    distinct_tensor(shape, seed).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Phantom preprocessed the way the training pipeline does it: resample to
/// the model grid, min-max normalize, add the channel axis.
pub fn phantom_sample(class: AgeClass, seed: u64, size: usize, sigma: f64) -> Sample<f32> {
    let vol = gen_phantom_with(class, seed, vcnn::niftio::PHANTOM_SIZE, sigma);
    let resampled = resample(&vol, [size, size, size], ResampleMethod::Trilinear).unwrap();
    let normalized = normalize_intensity(&resampled);
    Sample {
        input: normalized.voxels.reshape(&[size, size, size, 1]).unwrap(),
        label: class.index(),
    }
}

/// Leave-one-out nearest-centroid accuracy over feature vectors. This is
/// the separability floor oracle: no learning involved.
pub fn nearest_centroid_loo(samples: &[(Vec<f32>, usize)]) -> f64 {
    let k = 3;
    let dim = samples[0].0.len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (v, label) in samples {
        counts[*label] += 1;
        for (s, &x) in sums[*label].iter_mut().zip(v) {
            *s += x as f64;
        }
    }

    let mut correct = 0usize;
    for (v, label) in samples {
        let mut best = usize::MAX;
        let mut best_dist = f64::INFINITY;
        for c in 0..k {
            // Exclude the sample itself from its own class centroid.
            let n = if c == *label { counts[c] - 1 } else { counts[c] };
            if n == 0 {
                continue;
            }
            let mut dist = 0.0f64;
            for (j, &x) in v.iter().enumerate() {
                let mut centroid = sums[c][j];
                if c == *label {
                    centroid -= x as f64;
                }
                let diff = x as f64 - centroid / n as f64;
                dist += diff * diff;
            }
            if dist < best_dist {
                best_dist = dist;
                best = c;
            }
        }
        if best == *label {
            correct += 1;
        }
    }
    correct as f64 / samples.len() as f64
}
