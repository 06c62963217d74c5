//! Saliency evaluation: MAE, adaptive-threshold F_beta, precision/recall
//! sweeps, the weighted F-measure and dataset-level aggregation.

mod basic;
mod report;
mod weighted;

pub use basic::{
    adaptive_confusion, adaptive_threshold, f_beta_adaptive, f_from_pr, f_measure_at, mae, pr_sweep, Confusion,
    PrPoint, BETA2,
};
pub use report::{aggregate, evaluate_image, FAggregation, ImageMetrics, ImageRecord, MetricsReport};
pub use weighted::{distance_transform, weighted_f};
