//! Volume ingestion and dataset plumbing: NIfTI-1 reading and writing,
//! resampling to cubic grids, intensity normalization, manifest CSVs, and a
//! synthetic phantom generator that stands in for restricted clinical data.

mod manifest;
mod nifti;
mod phantom;
mod resample;

pub use manifest::{DatasetManifest, ManifestRow, Split};
pub use nifti::{read_nifti, write_nifti, write_nifti_with, Endianness, NiftiDatatype, NiftiWriteOptions};
pub use phantom::{gen_phantom, gen_phantom_with, PHANTOM_NOISE_SIGMA, PHANTOM_SIZE};
pub use resample::{normalize_intensity, resample, ResampleMethod};

use crate::tensor::Tensor;

/// Neurodevelopmental age cohort. Index order matches the classifier's
/// output classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AgeClass {
    Newborn,
    OneYear,
    ThreeYears,
}

impl AgeClass {
    pub const ALL: [AgeClass; 3] = [AgeClass::Newborn, AgeClass::OneYear, AgeClass::ThreeYears];

    pub fn index(self) -> usize {
        match self {
            AgeClass::Newborn => 0,
            AgeClass::OneYear => 1,
            AgeClass::ThreeYears => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeClass::Newborn => "newborn",
            AgeClass::OneYear => "1yr",
            AgeClass::ThreeYears => "3yr",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "newborn" => Some(AgeClass::Newborn),
            "1yr" => Some(AgeClass::OneYear),
            "3yr" => Some(AgeClass::ThreeYears),
            _ => None,
        }
    }
}

/// MRI pulse-sequence contrast type. `Unknown` covers volumes read straight
/// from a file before the manifest assigns their modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    T1,
    T2,
    Pd,
    Synthetic,
    Unknown,
}

impl Modality {
    pub fn label(self) -> &'static str {
        match self {
            Modality::T1 => "T1",
            Modality::T2 => "T2",
            Modality::Pd => "PD",
            Modality::Synthetic => "synthetic",
            Modality::Unknown => "unknown",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "T1" => Some(Modality::T1),
            "T2" => Some(Modality::T2),
            "PD" => Some(Modality::Pd),
            "synthetic" => Some(Modality::Synthetic),
            _ => None,
        }
    }
}

/// One scan: a voxel grid plus source metadata and an optional cohort label.
#[derive(Debug, Clone)]
pub struct Volume {
    /// Voxel grid, shape `[dim1, dim2, dim3]` in stored index order.
    pub voxels: Tensor<f32>,
    pub voxel_dims_mm: [f32; 3],
    pub modality: Modality,
    pub subject_id: String,
    pub age_class: Option<AgeClass>,
}

impl Volume {
    pub fn shape(&self) -> &[usize] {
        self.voxels.shape()
    }
}
