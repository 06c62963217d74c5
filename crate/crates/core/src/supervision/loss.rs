use serde::{Deserialize, Serialize};

use crate::equirect::BinaryMask;
use crate::error::{DdsError, Result};
use crate::network::{SideOutputs, STAGES};
use crate::nn::ops::{sigmoid, softplus};
use crate::tensor::{FeatureMap, Tensor};

/// Per-side losses (index 0 is side 1) and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sides: [f64; STAGES],
    pub total: f64,
}

impl LossReport {
    pub fn from_sides(sides: [f64; STAGES]) -> Self {
        Self {
            total: sides.iter().sum(),
            sides,
        }
    }
}

fn check_target(logits: &Tensor, gt: &BinaryMask) -> Result<()> {
    if logits.channels() != 1 || logits.height() != gt.height() || logits.width() != gt.width() {
        return Err(DdsError::Supervision(format!(
            "logits {:?} do not match a {}x{} ground truth",
            logits.shape(),
            gt.width(),
            gt.height()
        )));
    }
    Ok(())
}

/// Binary cross-entropy summed over pixels, computed from logits as
/// `softplus(z) - g*z` for numerical stability.
pub fn side_loss(logits: &Tensor, gt: &BinaryMask) -> Result<f64> {
    check_target(logits, gt)?;
    Ok(logits
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&z, &g)| softplus(z) - g as f64 * z)
        .sum())
}

/// Loss and its gradient `sigmoid(z) - g` with respect to the logits.
pub fn side_loss_with_grad(logits: &Tensor, gt: &BinaryMask) -> Result<(f64, Tensor)> {
    let loss = side_loss(logits, gt)?;
    let grad = logits
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&z, &g)| sigmoid(z) - g as f64)
        .collect();
    Ok((loss, Tensor::from_vec(1, logits.height(), logits.width(), grad)?))
}

/// Ground truth brought to a side output's resolution by nearest-neighbour sampling.
pub fn side_target(gt: &BinaryMask, logits: &Tensor) -> BinaryMask {
    gt.resize_nearest(logits.height(), logits.width())
}

fn check_sides(logits: &[FeatureMap]) -> Result<()> {
    if logits.len() != STAGES {
        return Err(DdsError::Configuration(format!(
            "expected {STAGES} side outputs, got {}",
            logits.len()
        )));
    }
    Ok(())
}

pub fn total_loss(sides: &SideOutputs, gt: &BinaryMask) -> Result<LossReport> {
    check_sides(&sides.logits)?;
    let mut out = [0.0; STAGES];
    for (o, f) in out.iter_mut().zip(&sides.logits) {
        *o = side_loss(&f.values, &side_target(gt, &f.values))?;
    }
    Ok(LossReport::from_sides(out))
}

/// Losses plus logit gradients for every side output.
pub fn total_loss_with_grads(logits: &[FeatureMap], gt: &BinaryMask) -> Result<(LossReport, Vec<Tensor>)> {
    check_sides(logits)?;
    let mut out = [0.0; STAGES];
    let mut grads = Vec::with_capacity(STAGES);
    for (o, f) in out.iter_mut().zip(logits) {
        let (l, g) = side_loss_with_grad(&f.values, &side_target(gt, &f.values))?;
        *o = l;
        grads.push(g);
    }
    Ok((LossReport::from_sides(out), grads))
}
