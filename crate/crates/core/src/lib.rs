//! Conditional denoising diffusion on residual Haar wavelet sub-bands for
//! single-image super-resolution, built on a small reverse-mode tensor engine.
//!
//! Pipeline: a low-resolution image is bicubic-upsampled to the target size
//! and split into four Haar sub-bands. An initial predictor maps those to a
//! first estimate of the high-resolution sub-bands, and a conditional U-Net
//! denoiser samples the remaining residual by iterative refinement. Both
//! networks are trained jointly through the noise-prediction loss.

pub mod cli;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
