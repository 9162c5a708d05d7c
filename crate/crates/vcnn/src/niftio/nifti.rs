//! NIfTI-1 reading and writing.
//!
//! Only the subset this pipeline needs is supported: single-frame 3D
//! volumes, datatypes uint8/int16/float32, both byte orders (detected via
//! sizeof_hdr), scl_slope/scl_inter rescaling, gzip compression, and both
//! magics - `n+1\0` (voxels in the same file at vox_offset) and `ni1\0`
//! (voxels in a sibling `.img` file). qform/sform orientation codes are
//! parsed for validation but not applied; volumes are used in stored index
//! order. Anything else is rejected loudly.

use super::{Modality, Volume};
use crate::error::{Error, NiftiError, Result};
use crate::tensor::Tensor;
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use std::io::{Read, Write};
use std::path::Path;

const HEADER_SIZE: usize = 348;

// Header field byte offsets.
const OFF_SIZEOF_HDR: usize = 0;
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_QFORM_CODE: usize = 252;
const OFF_SFORM_CODE: usize = 254;
const OFF_MAGIC: usize = 344;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NiftiDatatype {
    UInt8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    fn code(self) -> i16 {
        match self {
            NiftiDatatype::UInt8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    fn bitpix(self) -> i16 {
        match self {
            NiftiDatatype::UInt8 => 8,
            NiftiDatatype::Int16 => 16,
            NiftiDatatype::Float32 => 32,
        }
    }

    fn size_bytes(self) -> usize {
        (self.bitpix() / 8) as usize
    }

    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(NiftiDatatype::UInt8),
            4 => Some(NiftiDatatype::Int16),
            16 => Some(NiftiDatatype::Float32),
            _ => None,
        }
    }
}

fn read_u16(buf: &[u8], off: usize, e: Endianness) -> u16 {
    let b = [buf[off], buf[off + 1]];
    match e {
        Endianness::Little => u16::from_le_bytes(b),
        Endianness::Big => u16::from_be_bytes(b),
    }
}

fn read_i16(buf: &[u8], off: usize, e: Endianness) -> i16 {
    read_u16(buf, off, e) as i16
}

fn read_i32(buf: &[u8], off: usize, e: Endianness) -> i32 {
    let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
    match e {
        Endianness::Little => i32::from_le_bytes(b),
        Endianness::Big => i32::from_be_bytes(b),
    }
}

fn read_f32(buf: &[u8], off: usize, e: Endianness) -> f32 {
    let b = [buf[off], buf[off + 1], buf[off + 2], buf[off + 3]];
    match e {
        Endianness::Little => f32::from_le_bytes(b),
        Endianness::Big => f32::from_be_bytes(b),
    }
}

fn is_gzip(bytes: &[u8]) -> bool {
    bytes.len() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b
}

fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)?;
    if is_gzip(&raw) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads a `.nii`, `.nii.gz`, or `.hdr`/`.img` pair into a [`Volume`].
/// Modality and cohort label are dataset metadata; the caller assigns them
/// from the manifest.
pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = read_maybe_gzip(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::BadHeader {
            path: path.to_path_buf(),
            reason: format!("file holds {} bytes, a header needs {HEADER_SIZE}", bytes.len()),
        }
        .into());
    }

    let endian = if read_i32(&bytes, OFF_SIZEOF_HDR, Endianness::Little) == HEADER_SIZE as i32 {
        Endianness::Little
    } else if read_i32(&bytes, OFF_SIZEOF_HDR, Endianness::Big) == HEADER_SIZE as i32 {
        Endianness::Big
    } else {
        return Err(NiftiError::BadSizeofHdr {
            path: path.to_path_buf(),
            found: read_i32(&bytes, OFF_SIZEOF_HDR, Endianness::Little),
        }
        .into());
    };

    let magic: [u8; 4] = bytes[OFF_MAGIC..OFF_MAGIC + 4].try_into().expect("4 bytes");
    let single_file = match &magic {
        b"n+1\0" => true,
        b"ni1\0" => false,
        _ => {
            return Err(NiftiError::BadMagic {
                path: path.to_path_buf(),
                found: magic,
            }
            .into())
        }
    };

    let bad_header = |reason: String| -> Error {
        NiftiError::BadHeader {
            path: path.to_path_buf(),
            reason,
        }
        .into()
    };

    let ndim = read_i16(&bytes, OFF_DIM, endian);
    if !(1..=7).contains(&ndim) {
        return Err(bad_header(format!("dim[0] = {ndim} out of range 1..=7")));
    }
    let mut dims = [1usize; 3];
    for (k, d) in dims.iter_mut().enumerate() {
        if (k as i16) < ndim {
            let v = read_i16(&bytes, OFF_DIM + 2 * (k + 1), endian);
            if v < 1 {
                return Err(bad_header(format!("dim[{}] = {v} must be >= 1", k + 1)));
            }
            *d = v as usize;
        }
    }
    for k in 4..=(ndim as usize) {
        let v = read_i16(&bytes, OFF_DIM + 2 * k, endian);
        if v > 1 {
            return Err(bad_header(format!(
                "dim[{k}] = {v}: only single-frame 3D volumes are supported"
            )));
        }
    }

    let dt_code = read_i16(&bytes, OFF_DATATYPE, endian);
    let datatype = NiftiDatatype::from_code(dt_code).ok_or(NiftiError::UnsupportedDatatype {
        path: path.to_path_buf(),
        code: dt_code,
    })?;
    let bitpix = read_i16(&bytes, OFF_BITPIX, endian);
    if bitpix != datatype.bitpix() {
        return Err(bad_header(format!(
            "bitpix {bitpix} does not match datatype code {dt_code}"
        )));
    }

    let mut voxel_dims_mm = [1.0f32; 3];
    for (k, v) in voxel_dims_mm.iter_mut().enumerate() {
        let p = read_f32(&bytes, OFF_PIXDIM + 4 * (k + 1), endian);
        if p.is_finite() && p > 0.0 {
            *v = p;
        }
    }

    let mut slope = read_f32(&bytes, OFF_SCL_SLOPE, endian);
    let mut inter = read_f32(&bytes, OFF_SCL_INTER, endian);
    if slope == 0.0 || !slope.is_finite() || !inter.is_finite() {
        slope = 1.0;
        inter = 0.0;
    }

    // Orientation codes are validated but intentionally not applied.
    let _qform = read_i16(&bytes, OFF_QFORM_CODE, endian);
    let _sform = read_i16(&bytes, OFF_SFORM_CODE, endian);

    let vox_offset = read_f32(&bytes, OFF_VOX_OFFSET, endian);
    if !vox_offset.is_finite() || vox_offset < 0.0 {
        return Err(bad_header(format!("vox_offset {vox_offset} is invalid")));
    }
    let vox_offset = vox_offset as usize;

    let img_bytes_owned;
    let (data_bytes, data_offset) = if single_file {
        if vox_offset < HEADER_SIZE {
            return Err(bad_header(format!(
                "vox_offset {vox_offset} points inside the header"
            )));
        }
        (&bytes, vox_offset)
    } else {
        let img_path = path.with_extension("img");
        img_bytes_owned = read_maybe_gzip(&img_path)?;
        (&img_bytes_owned, vox_offset)
    };

    let (nx, ny, nz) = (dims[0], dims[1], dims[2]);
    let n = nx * ny * nz;
    let expected = data_offset + n * datatype.size_bytes();
    if data_bytes.len() < expected {
        return Err(NiftiError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: data_bytes.len(),
        }
        .into());
    }

    // File order is x-fastest; the tensor is row-major [nx, ny, nz] with z
    // fastest, so voxels are transposed on the way in.
    let src = &data_bytes[data_offset..expected];
    let step = datatype.size_bytes();
    let mut data = vec![0.0f32; n];
    let mut i = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let raw = match datatype {
                    NiftiDatatype::UInt8 => src[i] as f32,
                    NiftiDatatype::Int16 => read_i16(src, i, endian) as f32,
                    NiftiDatatype::Float32 => read_f32(src, i, endian),
                };
                data[(x * ny + y) * nz + z] = raw * slope + inter;
                i += step;
            }
        }
    }

    Ok(Volume {
        voxels: Tensor::new(vec![nx, ny, nz], data)?,
        voxel_dims_mm,
        modality: Modality::Unknown,
        subject_id: path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".nii").to_string())
            .unwrap_or_default(),
        age_class: None,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct NiftiWriteOptions {
    pub datatype: NiftiDatatype,
    pub endianness: Endianness,
    /// Stored in the header; the values passed to the writer are raw
    /// (pre-scale) and readers recover `raw * scl_slope + scl_inter`.
    pub scl_slope: f32,
    pub scl_inter: f32,
}

impl Default for NiftiWriteOptions {
    fn default() -> Self {
        Self {
            datatype: NiftiDatatype::Float32,
            endianness: Endianness::Little,
            scl_slope: 1.0,
            scl_inter: 0.0,
        }
    }
}

fn put_i16(buf: &mut [u8], off: usize, v: i16, e: Endianness) {
    let b = match e {
        Endianness::Little => v.to_le_bytes(),
        Endianness::Big => v.to_be_bytes(),
    };
    buf[off..off + 2].copy_from_slice(&b);
}

fn put_i32(buf: &mut [u8], off: usize, v: i32, e: Endianness) {
    let b = match e {
        Endianness::Little => v.to_le_bytes(),
        Endianness::Big => v.to_be_bytes(),
    };
    buf[off..off + 4].copy_from_slice(&b);
}

fn put_f32(buf: &mut [u8], off: usize, v: f32, e: Endianness) {
    let b = match e {
        Endianness::Little => v.to_le_bytes(),
        Endianness::Big => v.to_be_bytes(),
    };
    buf[off..off + 4].copy_from_slice(&b);
}

/// Writes a volume as a single-file NIfTI-1 (`n+1` magic, vox_offset 352).
/// Paths ending in `.gz` are gzip-compressed. The tensor holds raw values;
/// integer datatypes require integral values in range.
pub fn write_nifti_with(
    path: &Path,
    raw_voxels: &Tensor<f32>,
    voxel_dims_mm: [f32; 3],
    opts: NiftiWriteOptions,
) -> Result<()> {
    if raw_voxels.rank() != 3 {
        return Err(Error::Argument(format!(
            "volumes must be rank 3, got {:?}",
            raw_voxels.shape()
        )));
    }
    let (nx, ny, nz) = (
        raw_voxels.shape()[0],
        raw_voxels.shape()[1],
        raw_voxels.shape()[2],
    );
    for &d in raw_voxels.shape() {
        if d > i16::MAX as usize {
            return Err(Error::Argument(format!(
                "dimension {d} exceeds the i16 header field"
            )));
        }
    }

    let e = opts.endianness;
    let mut out = vec![0u8; 352];
    put_i32(&mut out, OFF_SIZEOF_HDR, HEADER_SIZE as i32, e);
    put_i16(&mut out, OFF_DIM, 3, e);
    put_i16(&mut out, OFF_DIM + 2, nx as i16, e);
    put_i16(&mut out, OFF_DIM + 4, ny as i16, e);
    put_i16(&mut out, OFF_DIM + 6, nz as i16, e);
    put_i16(&mut out, OFF_DATATYPE, opts.datatype.code(), e);
    put_i16(&mut out, OFF_BITPIX, opts.datatype.bitpix(), e);
    put_f32(&mut out, OFF_PIXDIM, 1.0, e);
    for (k, &v) in voxel_dims_mm.iter().enumerate() {
        put_f32(&mut out, OFF_PIXDIM + 4 * (k + 1), v, e);
    }
    put_f32(&mut out, OFF_VOX_OFFSET, 352.0, e);
    put_f32(&mut out, OFF_SCL_SLOPE, opts.scl_slope, e);
    put_f32(&mut out, OFF_SCL_INTER, opts.scl_inter, e);
    out[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"n+1\0");

    let data = raw_voxels.data();
    let check_int = |v: f32, lo: f32, hi: f32| -> Result<f32> {
        if v.fract() != 0.0 || v < lo || v > hi {
            Err(Error::Argument(format!(
                "raw value {v} is not an integer in [{lo}, {hi}] for the requested datatype"
            )))
        } else {
            Ok(v)
        }
    };
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = data[(x * ny + y) * nz + z];
                match opts.datatype {
                    NiftiDatatype::UInt8 => out.push(check_int(v, 0.0, 255.0)? as u8),
                    NiftiDatatype::Int16 => {
                        let v = check_int(v, i16::MIN as f32, i16::MAX as f32)? as i16;
                        let b = match e {
                            Endianness::Little => v.to_le_bytes(),
                            Endianness::Big => v.to_be_bytes(),
                        };
                        out.extend_from_slice(&b);
                    }
                    NiftiDatatype::Float32 => {
                        let b = match e {
                            Endianness::Little => v.to_le_bytes(),
                            Endianness::Big => v.to_be_bytes(),
                        };
                        out.extend_from_slice(&b);
                    }
                }
            }
        }
    }

    let is_gz = path
        .extension()
        .map(|x| x.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    if is_gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out)?;
        let compressed = enc.finish()?;
        crate::fsutil::write_atomic(path, &compressed)
    } else {
        crate::fsutil::write_atomic(path, &out)
    }
}

/// Writes a volume as float32 little-endian NIfTI-1.
pub fn write_nifti(path: &Path, volume: &Volume) -> Result<()> {
    write_nifti_with(
        path,
        &volume.voxels,
        volume.voxel_dims_mm,
        NiftiWriteOptions::default(),
    )
}
