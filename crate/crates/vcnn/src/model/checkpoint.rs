//! Checkpoint persistence.
//!
//! File layout: the magic bytes `VCNN1`, a little-endian u32 length prefix,
//! a UTF-8 JSON header (model id, dtype, seed, epoch, layer and parameter
//! names with shapes), then the raw parameter blobs in header order as
//! little-endian IEEE-754 values. Moving statistics are stored alongside
//! trainable parameters so a reloaded model evaluates identically.

use super::{model_spec_by_id, LayerParams, Model};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"VCNN1";

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: String,
    pub dtype: String,
    pub seed: u64,
    pub epoch: u64,
    pub input_shape: Vec<usize>,
    pub class_names: Vec<String>,
    pub layers: Vec<LayerBlobs>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LayerBlobs {
    pub name: String,
    pub params: Vec<BlobInfo>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Parameter tensors of one layer in serialization order.
fn layer_tensors<T: Scalar>(p: &LayerParams<T>) -> Vec<(&'static str, &Tensor<T>)> {
    match p {
        LayerParams::None => vec![],
        LayerParams::Conv(c) => vec![("kernel", &c.kernel), ("bias", &c.bias)],
        LayerParams::BatchNorm(b) => vec![
            ("gamma", &b.gamma),
            ("beta", &b.beta),
            ("moving_mean", &b.moving_mean),
            ("moving_var", &b.moving_var),
        ],
        LayerParams::Dense { weights, bias } => vec![("weights", weights), ("bias", bias)],
    }
}

fn layer_tensors_mut<T: Scalar>(p: &mut LayerParams<T>) -> Vec<(&'static str, &mut Tensor<T>)> {
    match p {
        LayerParams::None => vec![],
        LayerParams::Conv(c) => vec![("kernel", &mut c.kernel), ("bias", &mut c.bias)],
        LayerParams::BatchNorm(b) => vec![
            ("gamma", &mut b.gamma),
            ("beta", &mut b.beta),
            ("moving_mean", &mut b.moving_mean),
            ("moving_var", &mut b.moving_var),
        ],
        LayerParams::Dense { weights, bias } => {
            vec![("weights", weights), ("bias", bias)]
        }
    }
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let layers = model
        .layers()
        .iter()
        .zip(model.params())
        .map(|(spec, p)| LayerBlobs {
            name: spec.name.clone(),
            params: layer_tensors(p)
                .iter()
                .map(|(n, t)| BlobInfo {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        })
        .collect();
    let header = CheckpointHeader {
        format_version: 1,
        model: model.id().to_string(),
        dtype: T::DTYPE.name().to_string(),
        seed: model.seed(),
        epoch: model.epoch(),
        input_shape: model.input_shape().to_vec(),
        class_names: model.class_names().to_vec(),
        layers,
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(CheckpointError::CorruptHeader(e.to_string())))?;

    let n_values: usize = model.params().iter().flat_map(layer_tensors).map(|(_, t)| t.len()).sum();
    let mut bytes =
        Vec::with_capacity(CHECKPOINT_MAGIC.len() + 4 + header_json.len() + n_values * T::DTYPE.size_bytes());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in model.params() {
        for (_, t) in layer_tensors(p) {
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
        }
    }

    crate::fsutil::write_atomic(path, &bytes)
}

/// Reads just the header of a checkpoint (no blobs), for inspection and for
/// dispatching on the stored model id and dtype.
pub fn peek_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path)?;
    parse_header(&bytes).map(|(h, _)| h)
}

fn parse_header(bytes: &[u8]) -> Result<(CheckpointHeader, usize)> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(CheckpointError::BadMagic.into());
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let len_off = CHECKPOINT_MAGIC.len();
    let header_len =
        u32::from_le_bytes([bytes[len_off], bytes[len_off + 1], bytes[len_off + 2], bytes[len_off + 3]])
            as usize;
    let header_start = len_off + 4;
    let header_end = header_start + header_len;
    if bytes.len() < header_end {
        return Err(CheckpointError::CorruptHeader(
            "header extends past end of file".into(),
        )
        .into());
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[header_start..header_end])
        .map_err(|e| CheckpointError::CorruptHeader(e.to_string()))?;
    if header.format_version != 1 {
        return Err(CheckpointError::CorruptHeader(format!(
            "unsupported format version {}",
            header.format_version
        ))
        .into());
    }
    Ok((header, header_end))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = std::fs::read(path)?;
    let (header, mut offset) = parse_header(&bytes)?;

    if header.dtype != T::DTYPE.name() {
        return Err(CheckpointError::DtypeMismatch(header.dtype).into());
    }
    let (input_shape, layers) = model_spec_by_id(&header.model).ok_or_else(|| {
        Error::Checkpoint(CheckpointError::ArchitectureMismatch(format!(
            "unknown model id \"{}\"",
            header.model
        )))
    })?;
    if input_shape != header.input_shape {
        return Err(CheckpointError::ArchitectureMismatch(format!(
            "input shape {:?} does not match {:?} expected for \"{}\"",
            header.input_shape, input_shape, header.model
        ))
        .into());
    }
    let mut model = Model::<T>::new(header.model.clone(), input_shape, layers)?;

    // The header's layer/parameter listing must agree with the architecture
    // rebuilt from the model id.
    if header.layers.len() != model.layers().len() {
        return Err(CheckpointError::ArchitectureMismatch(format!(
            "{} layers in header, {} in model \"{}\"",
            header.layers.len(),
            model.layers().len(),
            model.id()
        ))
        .into());
    }
    for (blob, (spec, params)) in header
        .layers
        .iter()
        .zip(model.layers().iter().zip(model.params()))
    {
        if blob.name != spec.name {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "layer \"{}\" in header where model has \"{}\"",
                blob.name, spec.name
            ))
            .into());
        }
        let expected: Vec<BlobInfo> = layer_tensors(params)
            .iter()
            .map(|(n, t)| BlobInfo {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        if blob.params != expected {
            return Err(CheckpointError::ArchitectureMismatch(format!(
                "layer \"{}\": parameter table {:?} does not match expected {:?}",
                blob.name, blob.params, expected
            ))
            .into());
        }
    }

    let value_size = T::DTYPE.size_bytes();
    for params in model.params_mut() {
        for (pname, tensor) in layer_tensors_mut(params) {
            let n_bytes = tensor.len() * value_size;
            if bytes.len() < offset + n_bytes {
                return Err(CheckpointError::TruncatedBlob(pname.to_string()).into());
            }
            for (i, v) in tensor.data_mut().iter_mut().enumerate() {
                *v = T::read_le(&bytes[offset + i * value_size..]);
            }
            offset += n_bytes;
        }
    }
    if offset != bytes.len() {
        return Err(CheckpointError::CorruptHeader(format!(
            "{} trailing bytes after parameter blobs",
            bytes.len() - offset
        ))
        .into());
    }

    model.set_epoch(header.epoch);
    Ok(model)
}
