//! Volume resampling and intensity normalization.

use super::Volume;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMethod {
    Trilinear,
    Nearest,
}

/// Corner-aligned source coordinate for a target index: with more than one
/// output sample the grid corners map onto each other, which makes identity
/// resampling exact; a single output sample maps to the source center.
fn source_coord(target_idx: usize, src_len: usize, dst_len: usize) -> f32 {
    if dst_len == 1 {
        (src_len - 1) as f32 / 2.0
    } else {
        target_idx as f32 * (src_len - 1) as f32 / (dst_len - 1) as f32
    }
}

/// Resamples a volume onto a new grid.
pub fn resample(v: &Volume, target: [usize; 3], method: ResampleMethod) -> Result<Volume> {
    if target.contains(&0) {
        return Err(Error::Argument(format!(
            "resample target {target:?} must have all dims >= 1"
        )));
    }
    let src = v.voxels.shape();
    let (sx, sy, sz) = (src[0], src[1], src[2]);
    let (tx, ty, tz) = (target[0], target[1], target[2]);
    let data = v.voxels.data();
    let at = |x: usize, y: usize, z: usize| data[(x * sy + y) * sz + z];

    let mut out = vec![0.0f32; tx * ty * tz];
    let mut i = 0;
    for x in 0..tx {
        let fx = source_coord(x, sx, tx);
        for y in 0..ty {
            let fy = source_coord(y, sy, ty);
            for z in 0..tz {
                let fz = source_coord(z, sz, tz);
                out[i] = match method {
                    ResampleMethod::Nearest => at(
                        (fx.round() as usize).min(sx - 1),
                        (fy.round() as usize).min(sy - 1),
                        (fz.round() as usize).min(sz - 1),
                    ),
                    ResampleMethod::Trilinear => {
                        let x0 = (fx.floor() as usize).min(sx - 1);
                        let y0 = (fy.floor() as usize).min(sy - 1);
                        let z0 = (fz.floor() as usize).min(sz - 1);
                        let x1 = (x0 + 1).min(sx - 1);
                        let y1 = (y0 + 1).min(sy - 1);
                        let z1 = (z0 + 1).min(sz - 1);
                        let (dx, dy, dz) = (fx - x0 as f32, fy - y0 as f32, fz - z0 as f32);
                        let c00 = at(x0, y0, z0) * (1.0 - dx) + at(x1, y0, z0) * dx;
                        let c01 = at(x0, y0, z1) * (1.0 - dx) + at(x1, y0, z1) * dx;
                        let c10 = at(x0, y1, z0) * (1.0 - dx) + at(x1, y1, z0) * dx;
                        let c11 = at(x0, y1, z1) * (1.0 - dx) + at(x1, y1, z1) * dx;
                        let c0 = c00 * (1.0 - dy) + c10 * dy;
                        let c1 = c01 * (1.0 - dy) + c11 * dy;
                        c0 * (1.0 - dz) + c1 * dz
                    }
                };
                i += 1;
            }
        }
    }

    let scale = |s: usize, d: usize, mm: f32| -> f32 {
        if d > 1 {
            mm * (s - 1) as f32 / (d - 1) as f32
        } else {
            mm * s as f32
        }
    };
    Ok(Volume {
        voxels: Tensor::new(target.to_vec(), out)?,
        voxel_dims_mm: [
            scale(sx, tx, v.voxel_dims_mm[0]),
            scale(sy, ty, v.voxel_dims_mm[1]),
            scale(sz, tz, v.voxel_dims_mm[2]),
        ],
        modality: v.modality,
        subject_id: v.subject_id.clone(),
        age_class: v.age_class,
    })
}

/// Per-volume min-max rescale to [0, 1]; constant volumes map to all zeros.
pub fn normalize_intensity(v: &Volume) -> Volume {
    let min = v.voxels.data().iter().cloned().fold(f32::INFINITY, f32::min);
    let max = v
        .voxels
        .data()
        .iter()
        .cloned()
        .fold(f32::NEG_INFINITY, f32::max);
    let range = max - min;
    let voxels = if range > 0.0 {
        v.voxels.map(|x| (x - min) / range)
    } else {
        Tensor::zeros(v.voxels.shape()).expect("shape already validated")
    };
    Volume {
        voxels,
        voxel_dims_mm: v.voxel_dims_mm,
        modality: v.modality,
        subject_id: v.subject_id.clone(),
        age_class: v.age_class,
    }
}
