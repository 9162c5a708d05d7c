//! 2D and 3D convolution (cross-correlation, stride 1).
//!
//! Layout is channels-last: inputs are `[h, w, c_in]` / `[d, h, w, c_in]`,
//! kernels `[kh, kw, c_in, c_out]` / `[kd, kh, kw, c_in, c_out]`. The 2D op
//! runs through the 3D core with a unit depth axis. No kernel flip is
//! applied, matching the convention behind the reference layer tables.

use super::Padding;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use rayon::prelude::*;

/// Kernel, bias and padding for one convolution layer. Stride is fixed at 1.
#[derive(Debug, Clone)]
pub struct ConvParams<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub padding: Padding,
}

impl<T: Scalar> ConvParams<T> {
    /// 2D parameters; kernel must be `[kh, kw, c_in, c_out]`.
    pub fn new_2d(kernel: Tensor<T>, bias: Tensor<T>, padding: Padding) -> Result<Self> {
        Self::validate(kernel, bias, padding, 4)
    }

    /// 3D parameters; kernel must be `[kd, kh, kw, c_in, c_out]`.
    pub fn new_3d(kernel: Tensor<T>, bias: Tensor<T>, padding: Padding) -> Result<Self> {
        Self::validate(kernel, bias, padding, 5)
    }

    fn validate(kernel: Tensor<T>, bias: Tensor<T>, padding: Padding, rank: usize) -> Result<Self> {
        if kernel.rank() != rank {
            return Err(Error::Shape(format!(
                "conv kernel must have rank {rank}, got {:?}",
                kernel.shape()
            )));
        }
        let c_out = kernel.shape()[rank - 1];
        if bias.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "conv bias shape {:?} does not match c_out {c_out}",
                bias.shape()
            )));
        }
        Ok(Self {
            kernel,
            bias,
            padding,
        })
    }

    pub fn c_in(&self) -> usize {
        self.kernel.shape()[self.kernel.rank() - 2]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.shape()[self.kernel.rank() - 1]
    }
}

/// Begin/end zero-pad amounts for one axis under same padding at stride 1.
fn pad_amounts(k: usize) -> (usize, usize) {
    let total = k - 1;
    let begin = total / 2;
    (begin, total - begin)
}

fn output_extent(input: usize, kernel: usize, padding: Padding, axis: &str) -> Result<usize> {
    match padding {
        Padding::Same => Ok(input),
        Padding::Valid => {
            if input < kernel {
                Err(Error::Shape(format!(
                    "valid convolution underflow on {axis} axis: input {input} < kernel {kernel}"
                )))
            } else {
                Ok(input - kernel + 1)
            }
        }
    }
}

/// Zero-pads the three spatial axes of a `[d, h, w, c]` tensor.
fn pad_spatial<T: Scalar>(x: &Tensor<T>, pads: [(usize, usize); 3]) -> Tensor<T> {
    let s = x.shape();
    let (d, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (dp, hp, wp) = (
        d + pads[0].0 + pads[0].1,
        h + pads[1].0 + pads[1].1,
        w + pads[2].0 + pads[2].1,
    );
    let mut out = vec![T::zero(); dp * hp * wp * c];
    let src = x.data();
    for i in 0..d {
        for j in 0..h {
            let src_off = (i * h + j) * w * c;
            let dst_off = (((i + pads[0].0) * hp + (j + pads[1].0)) * wp + pads[2].0) * c;
            out[dst_off..dst_off + w * c].copy_from_slice(&src[src_off..src_off + w * c]);
        }
    }
    Tensor::new(vec![dp, hp, wp, c], out).expect("padded shape is consistent")
}

struct ConvDims {
    kd: usize,
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    pads: [(usize, usize); 3],
    out_sp: [usize; 3],
}

fn check_dims<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<ConvDims> {
    let ks = p.kernel.shape();
    let (kd, kh, kw, c_in, c_out) = (ks[0], ks[1], ks[2], ks[3], ks[4]);
    let s = x.shape();
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv input must be [d, h, w, c_in], got {s:?}"
        )));
    }
    if s[3] != c_in {
        return Err(Error::Shape(format!(
            "conv input channels {} do not match kernel c_in {c_in}",
            s[3]
        )));
    }
    let out_sp = [
        output_extent(s[0], kd, p.padding, "depth")?,
        output_extent(s[1], kh, p.padding, "height")?,
        output_extent(s[2], kw, p.padding, "width")?,
    ];
    let pads = match p.padding {
        Padding::Same => [pad_amounts(kd), pad_amounts(kh), pad_amounts(kw)],
        Padding::Valid => [(0, 0); 3],
    };
    Ok(ConvDims {
        kd,
        kh,
        kw,
        c_in,
        c_out,
        pads,
        out_sp,
    })
}

fn conv_core_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let dims = check_dims(x, p)?;
    let ConvDims {
        kd,
        kh,
        kw,
        c_in,
        c_out,
        pads,
        out_sp,
    } = dims;
    let (od, oh, ow) = (out_sp[0], out_sp[1], out_sp[2]);

    let padded;
    let xp = if p.padding == Padding::Same {
        padded = pad_spatial(x, pads);
        &padded
    } else {
        x
    };
    let (hp, wp) = (xp.shape()[1], xp.shape()[2]);
    let xd = xp.data();
    let kdata = p.kernel.data();
    let bias = p.bias.data();

    let mut out = vec![T::zero(); od * oh * ow * c_out];
    // Each depth slab is written by exactly one task, so the result does not
    // depend on the thread count.
    out.par_chunks_mut(oh * ow * c_out)
        .enumerate()
        .for_each(|(a, slab)| {
            for b in 0..oh {
                for c in 0..ow {
                    let orow = &mut slab[(b * ow + c) * c_out..(b * ow + c + 1) * c_out];
                    orow.copy_from_slice(bias);
                    for kdi in 0..kd {
                        for khi in 0..kh {
                            let xbase = (((a + kdi) * hp + (b + khi)) * wp + c) * c_in;
                            let kbase = ((kdi * kh + khi) * kw) * c_in * c_out;
                            for kwi in 0..kw {
                                let xrow = &xd[xbase + kwi * c_in..xbase + (kwi + 1) * c_in];
                                let krow = &kdata
                                    [kbase + kwi * c_in * c_out..kbase + (kwi + 1) * c_in * c_out];
                                for (cii, &xv) in xrow.iter().enumerate() {
                                    let wrow = &krow[cii * c_out..(cii + 1) * c_out];
                                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                                        *o += xv * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    Tensor::new(vec![od, oh, ow, c_out], out)
}

/// Gradients of a convolution: (grad_input, grad_kernel, grad_bias).
fn conv_core_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let dims = check_dims(x, p)?;
    let ConvDims {
        kd,
        kh,
        kw,
        c_in,
        c_out,
        pads,
        out_sp,
    } = dims;
    let (od, oh, ow) = (out_sp[0], out_sp[1], out_sp[2]);
    if grad_out.shape() != [od, oh, ow, c_out] {
        return Err(Error::Contract(format!(
            "conv backward: grad shape {:?} does not match forward output [{od}, {oh}, {ow}, {c_out}]",
            grad_out.shape()
        )));
    }

    let padded;
    let xp = if p.padding == Padding::Same {
        padded = pad_spatial(x, pads);
        &padded
    } else {
        x
    };
    let (hp, wp) = (xp.shape()[1], xp.shape()[2]);
    let xd = xp.data();
    let g = grad_out.data();
    let kdata = p.kernel.data();

    let mut grad_bias = vec![T::zero(); c_out];
    for pos in 0..od * oh * ow {
        let grow = &g[pos * c_out..(pos + 1) * c_out];
        for (gb, &gv) in grad_bias.iter_mut().zip(grow) {
            *gb += gv;
        }
    }

    // Kernel gradient: one task per kernel spatial position owns the
    // corresponding [c_in, c_out] block.
    let mut grad_kernel = vec![T::zero(); kd * kh * kw * c_in * c_out];
    grad_kernel
        .par_chunks_mut(c_in * c_out)
        .enumerate()
        .for_each(|(kpos, block)| {
            let kwi = kpos % kw;
            let khi = (kpos / kw) % kh;
            let kdi = kpos / (kw * kh);
            for a in 0..od {
                for b in 0..oh {
                    for c in 0..ow {
                        let xoff = (((a + kdi) * hp + (b + khi)) * wp + (c + kwi)) * c_in;
                        let xrow = &xd[xoff..xoff + c_in];
                        let goff = ((a * oh + b) * ow + c) * c_out;
                        let grow = &g[goff..goff + c_out];
                        for (cii, &xv) in xrow.iter().enumerate() {
                            let dst = &mut block[cii * c_out..(cii + 1) * c_out];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d += xv * gv;
                            }
                        }
                    }
                }
            }
        });

    // Input gradient, gather form: every input element is written by exactly
    // one task, reading the output gradients that its padded position feeds.
    let s = x.shape();
    let (d, h, w) = (s[0], s[1], s[2]);
    let (pb_d, pb_h, pb_w) = (pads[0].0, pads[1].0, pads[2].0);
    let mut grad_x = vec![T::zero(); d * h * w * c_in];
    grad_x
        .par_chunks_mut(h * w * c_in)
        .enumerate()
        .for_each(|(ix, slab)| {
            for iy in 0..h {
                for iz in 0..w {
                    let row = &mut slab[(iy * w + iz) * c_in..(iy * w + iz + 1) * c_in];
                    for kdi in 0..kd {
                        let a = (ix + pb_d).wrapping_sub(kdi);
                        if a >= od {
                            continue;
                        }
                        for khi in 0..kh {
                            let b = (iy + pb_h).wrapping_sub(khi);
                            if b >= oh {
                                continue;
                            }
                            for kwi in 0..kw {
                                let c = (iz + pb_w).wrapping_sub(kwi);
                                if c >= ow {
                                    continue;
                                }
                                let goff = ((a * oh + b) * ow + c) * c_out;
                                let grow = &g[goff..goff + c_out];
                                let kbase = (((kdi * kh + khi) * kw + kwi) * c_in) * c_out;
                                for (cii, r) in row.iter_mut().enumerate() {
                                    let krow = &kdata[kbase + cii * c_out..kbase + (cii + 1) * c_out];
                                    let mut acc = T::zero();
                                    for (&kv, &gv) in krow.iter().zip(grow) {
                                        acc += kv * gv;
                                    }
                                    *r += acc;
                                }
                            }
                        }
                    }
                }
            }
        });

    Ok((
        Tensor::new(s.to_vec(), grad_x)?,
        Tensor::new(p.kernel.shape().to_vec(), grad_kernel)?,
        Tensor::vector(grad_bias)?,
    ))
}

/// 3D convolution forward on a `[d, h, w, c_in]` input.
pub fn conv3d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    if p.kernel.rank() != 5 {
        return Err(Error::Shape(format!(
            "conv3d requires a rank-5 kernel, got {:?}",
            p.kernel.shape()
        )));
    }
    conv_core_forward(x, p)
}

pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if p.kernel.rank() != 5 {
        return Err(Error::Shape(format!(
            "conv3d requires a rank-5 kernel, got {:?}",
            p.kernel.shape()
        )));
    }
    conv_core_backward(x, p, grad_out)
}

fn lift_2d<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    Tensor::new(shape, t.data().to_vec()).expect("unit axis preserves element count")
}

fn drop_unit_axis<T: Scalar>(t: Tensor<T>) -> Tensor<T> {
    let shape = t.shape()[1..].to_vec();
    let data = t.into_data();
    Tensor::new(shape, data).expect("unit axis preserves element count")
}

/// 2D convolution forward on an `[h, w, c_in]` input. Runs through the 3D
/// core with a unit depth axis.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    if p.kernel.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d requires a rank-4 kernel, got {:?}",
            p.kernel.shape()
        )));
    }
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "conv2d input must be [h, w, c_in], got {:?}",
            x.shape()
        )));
    }
    let p3 = ConvParams {
        kernel: lift_2d(&p.kernel),
        bias: p.bias.clone(),
        padding: p.padding,
    };
    Ok(drop_unit_axis(conv_core_forward(&lift_2d(x), &p3)?))
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if p.kernel.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv2d requires a rank-4 kernel, got {:?}",
            p.kernel.shape()
        )));
    }
    if x.rank() != 3 || grad_out.rank() != 3 {
        return Err(Error::Shape(format!(
            "conv2d backward expects rank-3 tensors, got input {:?} and grad {:?}",
            x.shape(),
            grad_out.shape()
        )));
    }
    let p3 = ConvParams {
        kernel: lift_2d(&p.kernel),
        bias: p.bias.clone(),
        padding: p.padding,
    };
    let (gx, gk, gb) = conv_core_backward(&lift_2d(x), &p3, &lift_2d(grad_out))?;
    Ok((drop_unit_axis(gx), drop_unit_axis(gk), gb))
}
