//! The full network: distortion-adaptive module, dilated backbone with five
//! taps, context block on the deepest tap, and the progressive decoder.

pub mod accounting;
pub mod backbone;
pub mod checkpoint;
pub mod decoder;
pub mod model;
pub mod params;
pub mod profile;

pub use accounting::{count_params_flops, Cost, CostReport};
pub use checkpoint::Checkpoint;
pub use model::{DdsNetwork, ForwardTrace, NetworkParams, SideOutputs};
pub use params::ParamGroup;
pub use profile::{BackboneProfile, NetworkConfig, Normalization, ProfileName, STAGES};
