//! Real-time learning-based video motion magnification.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`tensor`]: a minimal reverse-mode differentiable tensor engine
//! - [`arch`]: declarative network specs (baseline, proposed, variants),
//!   the magnification forward pass, removal switches, parameter/FLOPs
//!   accounting
//! - [`synth`]: deterministic synthetic scenes, datasets and test sweeps
//! - [`train`]: training loop, learning-to-remove fine-tuning, checkpoints
//! - [`eval`]: SSIM, Lucas-Kanade tracking, linearity / sub-pixel / noise
//!   evaluations and wall-clock benchmarks
//! - [`pipeline`]: frame I/O, temporal FIR bandpass filtering, offline and
//!   streaming inference modes
//! - [`classical`]: the linear Laplacian-pyramid magnifier used as a foil

pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
