use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DdsError> = std::result::Result<T, E>;

/// Every failure mode surfaced by the pipeline.
#[derive(Debug, Error)]
pub enum DdsError {
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("paired image/mask mismatch: {0}")]
    PairedData(String),
    #[error("block geometry: {0}")]
    BlockGeometry(String),
    #[error("degenerate scene spec: {0}")]
    DegenerateSpec(String),
    #[error("receptive field: {0}")]
    ReceptiveField(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("configuration: {0}")]
    Configuration(String),
    #[error("supervision: {0}")]
    Supervision(String),
    #[error("schedule: iteration {iter} is past the last iteration {max}")]
    Schedule { iter: usize, max: usize },
    #[error("data: {0}")]
    Data(String),
    #[error("metric undefined: ground truth has no foreground")]
    UndefinedMetric,
    #[error("every image was excluded from the report")]
    EmptyReport,
    #[error("split: {0}")]
    Split(String),
    #[error("average annotation map is undefined: every mask is empty")]
    DegenerateAam,
    #[error("histogram: {0}")]
    Histogram(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    ImageIo {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DdsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DdsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by diverging arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, DdsError::Numerical(_))
    }
}
