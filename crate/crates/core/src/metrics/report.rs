use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::basic::{adaptive_confusion, mae, Confusion, BETA2};
use super::weighted::weighted_f;
use crate::equirect::{BinaryMask, SaliencyMap};
use crate::error::{DdsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mae: f64,
    pub f_beta: f64,
    pub weighted_f: f64,
    /// Counts at the adaptive threshold, kept for pooled aggregation.
    pub confusion: Confusion,
}

/// All per-image metrics; `UndefinedMetric` when the ground truth is empty.
pub fn evaluate_image(pred: &SaliencyMap, gt: &BinaryMask) -> Result<ImageMetrics> {
    let confusion = adaptive_confusion(pred, gt)?;
    Ok(ImageMetrics {
        mae: mae(pred, gt)?,
        f_beta: confusion.f_measure(BETA2),
        weighted_f: weighted_f(pred, gt)?,
        confusion,
    })
}

/// How the dataset-level F_beta is formed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FAggregation {
    /// Mean of the per-image scores.
    #[default]
    PerImage,
    /// One score from confusion counts summed over images.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub name: String,
    pub metrics: ImageMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images: Vec<ImageRecord>,
    /// Images skipped because their ground truth has no foreground.
    pub excluded: usize,
    pub aggregation: FAggregation,
    pub mae: f64,
    pub weighted_f: f64,
    pub f_beta: f64,
}

/// Combine per-image results. Undefined images are counted and skipped;
/// any other error is returned.
pub fn aggregate(results: Vec<(String, Result<ImageMetrics>)>, aggregation: FAggregation) -> Result<MetricsReport> {
    let mut images = Vec::new();
    let mut excluded = 0;
    for (name, r) in results {
        match r {
            Ok(metrics) => images.push(ImageRecord { name, metrics }),
            Err(DdsError::UndefinedMetric) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    if images.is_empty() {
        return Err(DdsError::EmptyReport);
    }
    let n = images.len() as f64;
    let mean = |f: fn(&ImageMetrics) -> f64| images.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let f_beta = match aggregation {
        FAggregation::PerImage => mean(|m| m.f_beta),
        FAggregation::Pooled => {
            let mut total = Confusion::default();
            images.iter().for_each(|r| total.add(r.metrics.confusion));
            total.f_measure(BETA2)
        }
    };
    Ok(MetricsReport {
        mae: mean(|m| m.mae),
        weighted_f: mean(|m| m.weighted_f),
        f_beta,
        excluded,
        aggregation,
        images,
    })
}

impl MetricsReport {
    /// Plain-text summary table.
    pub fn table(&self, label: &str) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:>8} {:>8} {:>8}", "", "MAE ↓", "F^w_β ↑", "F_β ↑").unwrap();
        writeln!(out, "{:<16} {:>8.4} {:>8.4} {:>8.4}", label, self.mae, self.weighted_f, self.f_beta).unwrap();
        writeln!(out, "images: {}  excluded: {}", self.images.len(), self.excluded).unwrap();
        out
    }

    /// Per-image rows followed by a `mean` row.
    pub fn csv(&self) -> String {
        let mut out = String::from("image,MAE,F^w_beta,F_beta\n");
        for r in &self.images {
            let m = &r.metrics;
            writeln!(out, "{},{},{},{}", r.name, m.mae, m.weighted_f, m.f_beta).unwrap();
        }
        writeln!(out, "mean,{},{},{}", self.mae, self.weighted_f, self.f_beta).unwrap();
        out
    }
}
