//! Crate-wide error types.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or layer shape disagreement.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid argument outside its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A backward call received state that does not match its forward pass.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error(transparent)]
    Manifest(#[from] ManifestError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    /// Training aborted because the loss left the finite range.
    #[error("non-finite loss ({value}) at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        value: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised while reading or writing NIfTI-1 files.
#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("{path}: not a NIfTI-1 file (sizeof_hdr is {found}, expected 348 in either byte order)")]
    BadSizeofHdr { path: PathBuf, found: i32 },

    #[error("{path}: bad magic {found:?} (expected \"n+1\\0\" or \"ni1\\0\")")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported datatype code {code} (supported: uint8=2, int16=4, float32=16)")]
    UnsupportedDatatype { path: PathBuf, code: i16 },

    #[error("{path}: truncated voxel data (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{path}: invalid header: {reason}")]
    BadHeader { path: PathBuf, reason: String },
}

/// Errors raised while loading a dataset manifest CSV.
#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest is empty")]
    Empty,

    #[error("manifest header is missing required column \"{0}\"")]
    MissingColumn(String),

    #[error("manifest row {row}: duplicate path \"{path}\"")]
    DuplicatePath { row: usize, path: String },

    #[error("manifest row {row}: unknown age class \"{value}\" (expected newborn|1yr|3yr)")]
    BadAgeClass { row: usize, value: String },

    #[error("manifest row {row}: unknown modality \"{value}\" (expected T1|T2|PD|synthetic)")]
    BadModality { row: usize, value: String },

    #[error("manifest row {row}: unknown split \"{value}\" (expected train|val)")]
    BadSplit { row: usize, value: String },

    #[error("manifest row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Errors raised while loading a checkpoint file.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file: bad magic")]
    BadMagic,

    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),

    #[error("checkpoint dtype \"{0}\" does not match the requested dtype")]
    DtypeMismatch(String),

    #[error("checkpoint architecture mismatch: {0}")]
    ArchitectureMismatch(String),

    #[error("truncated checkpoint blob while reading \"{0}\"")]
    TruncatedBlob(String),
}
