use std::fmt;

use serde::{Deserialize, Serialize};

/// Disjoint parameter groups: the distortion-adaptive kernels, the backbone,
/// and the layers owned by each side output (1 = finest … 5 = coarsest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    DistortionKernels,
    Backbone,
    Side(usize),
}

impl ParamGroup {
    pub fn is_backbone(&self) -> bool {
        matches!(self, ParamGroup::Backbone)
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamGroup::DistortionKernels => f.write_str("da"),
            ParamGroup::Backbone => f.write_str("backbone"),
            ParamGroup::Side(s) => write!(f, "side{s}"),
        }
    }
}

pub type ParamSink<'a> = dyn FnMut(&str, ParamGroup, &[f64]) + 'a;
pub type ParamSinkMut<'a> = dyn FnMut(&str, ParamGroup, &mut [f64]) + 'a;
