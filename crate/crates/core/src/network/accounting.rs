//! Parameter and multiply-add counts derived from layer shapes alone.

use serde::Serialize;

use super::decoder::{compress_shape, fuse_shape, plain_context_shape, predict_shape};
use super::profile::{NetworkConfig, StageBody, UnitSpec, STAGES};
use crate::context::ContextIntegration;
use crate::distortion::DistortionKernels;
use crate::equirect::Resolution;
use crate::error::{DdsError, Result};
use crate::nn::ConvShape;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
}

impl Cost {
    fn add(&mut self, other: Cost) {
        self.params += other.params;
        self.macs += other.macs;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub distortion: Cost,
    pub backbone: Cost,
    pub head: Cost,
    /// `(height, width)` of each backbone tap.
    pub tap_sizes: Vec<(usize, usize)>,
}

impl CostReport {
    pub fn total(&self) -> Cost {
        let mut t = self.distortion;
        t.add(self.backbone);
        t.add(self.head);
        t
    }
}

fn conv_cost(shape: ConvShape, hw: (usize, usize)) -> Result<(Cost, (usize, usize))> {
    let out = shape.output_hw(hw.0, hw.1).ok_or_else(|| {
        DdsError::Configuration(format!("{}x{} input is too small for a layer", hw.1, hw.0))
    })?;
    Ok((
        Cost {
            params: shape.param_count() as u64,
            macs: shape.macs(hw.0, hw.1),
        },
        out,
    ))
}

fn unit_cost(unit: &UnitSpec, hw: (usize, usize), acc: &mut Cost) -> Result<(usize, usize)> {
    let (c, out) = conv_cost(unit.conv, hw)?;
    acc.add(c);
    if unit.affine {
        acc.params += 2 * unit.conv.out_channels as u64;
    }
    Ok(out)
}

/// Count parameters and multiply-adds of the network described by `config`
/// for one `resolution` input, without allocating any weights.
pub fn count_params_flops(config: &NetworkConfig, resolution: Resolution) -> Result<CostReport> {
    config.validate()?;
    let (h, w) = (resolution.height, resolution.width);
    config.check_input(h, w)?;

    let mut distortion = Cost::default();
    if config.use_da {
        let n = config.blocks;
        let shape = DistortionKernels::zeros(n, config.da_kernel)?.shape();
        distortion.params = shape.param_count() as u64;
        distortion.macs = shape.macs(h / n, w / n);
    }

    let profile = config.backbone();
    let mut backbone = Cost::default();
    let mut hw = (h, w);
    let mut tap_sizes = Vec::with_capacity(STAGES);
    for stage in &profile.stages {
        if let Some(p) = stage.pool {
            hw = p
                .output_hw(hw.0, hw.1)
                .ok_or_else(|| DdsError::Configuration("input too small for pooling".into()))?;
        }
        match &stage.body {
            StageBody::Plain(units) => {
                for u in units {
                    hw = unit_cost(u, hw, &mut backbone)?;
                }
            }
            StageBody::Residual(blocks) => {
                for b in blocks {
                    let input = hw;
                    let mut out = input;
                    for u in &b.units {
                        out = unit_cost(u, out, &mut backbone)?;
                    }
                    if let Some(s) = &b.shortcut {
                        unit_cost(s, input, &mut backbone)?;
                    }
                    hw = out;
                }
            }
        }
        tap_sizes.push(hw);
    }

    let width = config.head_width;
    let mut head = Cost::default();
    let widths = profile.stage_widths();
    for s in 0..STAGES - 1 {
        let hw = tap_sizes[s];
        head.add(conv_cost(compress_shape(widths[s], width), hw)?.0);
        head.add(conv_cost(fuse_shape(width), hw)?.0);
        head.add(conv_cost(predict_shape(width), hw)?.0);
    }
    let deep = tap_sizes[STAGES - 1];
    head.add(conv_cost(compress_shape(widths[STAGES - 1], width), deep)?.0);
    if config.use_mci {
        for &d in &crate::context::DILATIONS {
            head.add(conv_cost(ContextIntegration::branch_shape(width, width, d), deep)?.0);
        }
    } else {
        head.add(conv_cost(plain_context_shape(width), deep)?.0);
    }
    head.add(conv_cost(predict_shape(width), deep)?.0);

    Ok(CostReport {
        distortion,
        backbone,
        head,
        tap_sizes,
    })
}
