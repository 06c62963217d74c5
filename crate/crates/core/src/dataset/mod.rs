//! Dataset manifests, the train/test split and annotation statistics.

mod manifest;
mod stats;

pub use manifest::{split, DatasetManifest, ManifestRecord, Split, SCHEMA_VERSION};
pub use stats::{average_annotation_map, histogram, object_stats, ObjectStats};

use crate::equirect::{BinaryMask, EquirectImage};

/// One image with its ground-truth mask at the same resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: EquirectImage,
    pub mask: BinaryMask,
}
