//! A three-stage pyramid denoising network built on a small reverse-mode
//! differentiation engine.
//!
//! * [`tensor`], [`ops`], [`graph`]: dense NCHW tensors, operator kernels
//!   with their adjoints, and the eager/tape execution back ends.
//! * [`attention`]: channel attention and kernel-selecting fusion.
//! * [`model`]: noise estimation, pyramid and fusion stages, checkpoints.
//! * [`train`], [`gradcheck`], [`gradsuite`]: Adam training loop,
//!   finite-difference verification and the standard list of checks.
//! * [`experiment`]: the desk-scale train/evaluate/ablate run.
//! * [`data`], [`metrics`], [`png_io`]: synthetic noise, patches,
//!   PSNR/SSIM and image files.

pub mod attention;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod params;
pub mod png_io;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Eval, Graph, Tape, Var};
pub use model::{ModelConfig, PridNet};
pub use params::ParamStore;
pub use tensor::{Real, Shape, Tensor};
