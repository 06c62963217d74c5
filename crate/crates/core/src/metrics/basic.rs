use serde::{Deserialize, Serialize};

use crate::equirect::{BinaryMask, SaliencyMap};
use crate::error::{DdsError, Result};

/// Weight of precision relative to recall in F_beta.
pub const BETA2: f64 = 0.3;

pub(crate) fn check_pair(pred: &SaliencyMap, gt: &BinaryMask) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(DdsError::ShapeMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

fn check_foreground(gt: &BinaryMask) -> Result<()> {
    if gt.has_foreground() {
        Ok(())
    } else {
        Err(DdsError::UndefinedMetric)
    }
}

pub fn mae(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p - g as f64).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Pixels whose `255 * pred` reaches `threshold` are predicted foreground.
    pub fn at(pred: &SaliencyMap, gt: &BinaryMask, threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&p, &g) in pred.values().iter().zip(gt.data()) {
            match (p * 255.0 >= threshold, g == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    pub fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Zero when nothing is predicted.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f_measure(&self, beta2: f64) -> f64 {
        if self.tp + self.fp == 0 {
            return 0.0;
        }
        f_from_pr(self.precision(), self.recall(), beta2)
    }
}

/// `(1 + b2) P R / (b2 P + R)`, zero when both vanish.
pub fn f_from_pr(precision: f64, recall: f64, beta2: f64) -> f64 {
    let den = beta2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / den
    }
}

/// Threshold at twice the mean of `255 * pred`, clipped to 255.
pub fn adaptive_threshold(pred: &SaliencyMap) -> f64 {
    let mean = pred.values().iter().map(|v| v * 255.0).sum::<f64>() / pred.len() as f64;
    (2.0 * mean).min(255.0)
}

/// Confusion counts at the adaptive threshold.
pub fn adaptive_confusion(pred: &SaliencyMap, gt: &BinaryMask) -> Result<Confusion> {
    check_pair(pred, gt)?;
    check_foreground(gt)?;
    Ok(Confusion::at(pred, gt, adaptive_threshold(pred)))
}

pub fn f_beta_adaptive(pred: &SaliencyMap, gt: &BinaryMask) -> Result<f64> {
    Ok(adaptive_confusion(pred, gt)?.f_measure(BETA2))
}

/// F-measure with a fixed threshold on the `[0, 255]` scale.
pub fn f_measure_at(pred: &SaliencyMap, gt: &BinaryMask, threshold: f64, beta2: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    check_foreground(gt)?;
    Ok(Confusion::at(pred, gt, threshold).f_measure(beta2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every integer threshold 0..=255.
pub fn pr_sweep(pred: &SaliencyMap, gt: &BinaryMask) -> Result<Vec<PrPoint>> {
    check_pair(pred, gt)?;
    check_foreground(gt)?;
    // bucket by the smallest threshold each pixel fails, then sweep cumulatively
    let mut fg = [0u64; 257];
    let mut bg = [0u64; 257];
    for (&p, &g) in pred.values().iter().zip(gt.data()) {
        let v = p * 255.0;
        let reach = if v >= 255.0 { 256 } else { v.floor() as usize + 1 };
        if g == 1 {
            fg[reach] += 1;
        } else {
            bg[reach] += 1;
        }
    }
    let positives = gt.foreground_count() as u64;
    let mut tp = positives;
    let mut fp = (gt.len() as u64) - positives;
    let mut out = Vec::with_capacity(256);
    for t in 0..=255usize {
        // pixels with reach <= t fall below threshold t
        tp -= fg[t];
        fp -= bg[t];
        let c = Confusion {
            tp,
            fp,
            fn_: positives - tp,
        };
        out.push(PrPoint {
            threshold: t as u8,
            precision: c.precision(),
            recall: c.recall(),
        });
    }
    Ok(out)
}
