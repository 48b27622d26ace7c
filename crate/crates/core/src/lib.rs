//! Few-shot underwater bioacoustic target recognition.
//!
//! The crate is organized as a pipeline:
//!
//! - [`tensor`]: reverse-mode autodiff engine with the conv/pool/norm kernels
//!   the model needs, plus the Adam optimizer.
//! - [`dsp`]: WAV ingestion, resampling, segmentation, spectral-subtraction
//!   denoising, and log-Mel feature extraction.
//! - [`attention`]: Gaussian-smoothed frequency attention and dual-branch
//!   channel attention.
//! - [`model`]: the MT-BCA-CNN encoder, classification head, reconstruction
//!   decoder, and checkpoint format.
//! - [`train`]: losses, uncertainty-based task weighting, the training loop.
//! - [`metrics`]: confusion matrices and classification metrics.
//! - [`data`]: dataset discovery, stratified splitting, feature caching.
//! - [`synth`]: synthetic tone datasets for self-tests and demos.

pub mod attention;
pub mod data;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
