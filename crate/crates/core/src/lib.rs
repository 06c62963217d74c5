//! Distortion-adaptive salient object detection on equirectangular 360° images.
//!
//! The crate bundles the full pipeline: equirectangular image handling and a
//! spherical-cap scene generator ([`equirect`]), the per-block distortion
//! adaptive convolution ([`distortion`]), the dilated context block
//! ([`context`]), the deeply supervised network ([`network`]), losses and
//! training ([`supervision`]), evaluation ([`metrics`]) and dataset tooling
//! ([`dataset`]).

pub mod context;
pub mod dataset;
pub mod distortion;
pub mod equirect;
pub mod error;
pub mod io;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod supervision;
pub mod tensor;

pub use error::{DdsError, Result};
pub use tensor::Tensor;
