//! Minimal CPU layers with hand-written adjoints.

pub mod conv;
mod gemm;
pub mod ops;

pub use conv::{Conv2d, ConvShape};
pub use ops::{ChannelAffine, MaxPool};
