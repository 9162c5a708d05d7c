//! A from-scratch volumetric CNN engine: dense tensors, 2D/3D convolutional
//! layers with exact backward passes, the reference brain-age classifier
//! architectures, RMSprop training, NIfTI-1 volume ingestion, and
//! classification metrics.

pub mod cli;
pub mod error;
mod fsutil;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod niftio;
mod rngutil;
pub mod tensor;
pub mod train;
