//! Backbone profiles and the static layer plan shared by execution and
//! parameter/FLOP accounting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::MCI_WIDTH;
use crate::distortion::{DEFAULT_BLOCKS, DEFAULT_KERNEL};
use crate::error::{DdsError, Result};
use crate::nn::{ConvShape, MaxPool};

/// Number of backbone stages, and of side outputs.
pub const STAGES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileName {
    #[serde(rename = "mini")]
    Mini,
    #[serde(rename = "resnet50-dilated")]
    Resnet50Dilated,
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileName::Mini => "mini",
            ProfileName::Resnet50Dilated => "resnet50-dilated",
        })
    }
}

impl FromStr for ProfileName {
    type Err = DdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mini" => Ok(ProfileName::Mini),
            "resnet50-dilated" | "resnet50" => Ok(ProfileName::Resnet50Dilated),
            other => Err(DdsError::Configuration(format!("unknown profile {other:?}"))),
        }
    }
}

/// A convolution optionally followed by a per-channel affine (frozen batch norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitSpec {
    pub conv: ConvShape,
    pub affine: bool,
}

/// Residual block: `relu(units(x) + shortcut(x))`, rectifiers between units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub units: Vec<UnitSpec>,
    pub shortcut: Option<UnitSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageBody {
    /// Units each followed by a rectifier.
    Plain(Vec<UnitSpec>),
    Residual(Vec<BlockSpec>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub pool: Option<MaxPool>,
    pub body: StageBody,
}

impl StageSpec {
    pub fn out_channels(&self) -> usize {
        match &self.body {
            StageBody::Plain(units) => units.last().expect("non-empty stage").conv.out_channels,
            StageBody::Residual(blocks) => {
                blocks.last().expect("non-empty stage").units.last().expect("non-empty block").conv.out_channels
            }
        }
    }

    fn convs(&self) -> Vec<ConvShape> {
        match &self.body {
            StageBody::Plain(units) => units.iter().map(|u| u.conv).collect(),
            StageBody::Residual(blocks) => blocks
                .iter()
                .flat_map(|b| b.units.iter().chain(&b.shortcut).map(|u| u.conv))
                .collect(),
        }
    }

    /// Product of the strides applied by this stage.
    pub fn stride(&self) -> usize {
        let pool = self.pool.map_or(1, |p| p.stride);
        let convs = match &self.body {
            StageBody::Plain(units) => units.iter().map(|u| u.conv.stride).product::<usize>(),
            StageBody::Residual(blocks) => blocks
                .iter()
                .map(|b| b.units.iter().map(|u| u.conv.stride).product::<usize>())
                .product(),
        };
        pool * convs
    }

    /// Largest dilation of any spatial convolution in the stage.
    pub fn dilation(&self) -> usize {
        self.convs()
            .iter()
            .filter(|c| c.kernel > 1)
            .map(|c| c.dilation)
            .max()
            .unwrap_or(1)
    }
}

/// Backbone architecture with the five side-output taps R1..R5.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneProfile {
    pub name: ProfileName,
    pub stages: Vec<StageSpec>,
}

fn unit(conv: ConvShape, affine: bool) -> UnitSpec {
    UnitSpec { conv, affine }
}

fn basic_block(cin: usize, cout: usize, stride: usize, dilation: usize) -> BlockSpec {
    let shortcut = (stride != 1 || cin != cout)
        .then(|| unit(ConvShape::pointwise(cin, cout).with_stride(stride), false));
    BlockSpec {
        units: vec![
            unit(ConvShape::same(cin, cout, 3, dilation).with_stride(stride), false),
            unit(ConvShape::same(cout, cout, 3, dilation), false),
        ],
        shortcut,
    }
}

fn bottleneck(cin: usize, mid: usize, cout: usize, stride: usize, dilation: usize) -> BlockSpec {
    let shortcut = (stride != 1 || cin != cout).then(|| {
        unit(ConvShape::pointwise(cin, cout).with_stride(stride).without_bias(), true)
    });
    BlockSpec {
        units: vec![
            unit(ConvShape::pointwise(cin, mid).without_bias(), true),
            unit(ConvShape::same(mid, mid, 3, dilation).with_stride(stride).without_bias(), true),
            unit(ConvShape::pointwise(mid, cout).without_bias(), true),
        ],
        shortcut,
    }
}

fn bottleneck_stage(cin: usize, mid: usize, blocks: usize, stride: usize, dilation: usize) -> Vec<BlockSpec> {
    let cout = mid * 4;
    let mut out = vec![bottleneck(cin, mid, cout, stride, dilation)];
    out.extend((1..blocks).map(|_| bottleneck(cout, mid, cout, 1, dilation)));
    out
}

impl BackboneProfile {
    pub fn from_name(name: ProfileName) -> Self {
        match name {
            ProfileName::Mini => Self::mini(),
            ProfileName::Resnet50Dilated => Self::resnet50_dilated(),
        }
    }

    /// Desk-scale backbone: widths `[16, 32, 64, 64, 64]`, same stride and
    /// dilation schedule as the full profile.
    pub fn mini() -> Self {
        let stem = StageSpec {
            pool: None,
            body: StageBody::Plain(vec![
                unit(ConvShape::same(3, 16, 3, 1).with_stride(2), false),
                unit(ConvShape::same(16, 16, 3, 1), false),
            ]),
        };
        let residual = |cin, cout, stride, dilation| StageSpec {
            pool: None,
            body: StageBody::Residual(vec![basic_block(cin, cout, stride, dilation)]),
        };
        Self {
            name: ProfileName::Mini,
            stages: vec![
                stem,
                residual(16, 32, 2, 1),
                residual(32, 64, 2, 1),
                residual(64, 64, 1, 2),
                residual(64, 64, 1, 4),
            ],
        }
    }

    /// ResNet-50 without pooling/classifier; the last two stages run at
    /// stride 1 with dilation 2 and 4, so the deepest features sit at 1/8.
    pub fn resnet50_dilated() -> Self {
        let stem = StageSpec {
            pool: None,
            body: StageBody::Plain(vec![unit(
                ConvShape::same(3, 64, 7, 1).with_stride(2).without_bias(),
                true,
            )]),
        };
        let pool = MaxPool {
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        Self {
            name: ProfileName::Resnet50Dilated,
            stages: vec![
                stem,
                StageSpec {
                    pool: Some(pool),
                    body: StageBody::Residual(bottleneck_stage(64, 64, 3, 1, 1)),
                },
                StageSpec {
                    pool: None,
                    body: StageBody::Residual(bottleneck_stage(256, 128, 4, 2, 1)),
                },
                StageSpec {
                    pool: None,
                    body: StageBody::Residual(bottleneck_stage(512, 256, 6, 1, 2)),
                },
                StageSpec {
                    pool: None,
                    body: StageBody::Residual(bottleneck_stage(1024, 512, 3, 1, 4)),
                },
            ],
        }
    }

    pub fn stage_widths(&self) -> Vec<usize> {
        self.stages.iter().map(StageSpec::out_channels).collect()
    }

    /// Cumulative stride of every tap relative to the input.
    pub fn tap_strides(&self) -> Vec<usize> {
        self.stages
            .iter()
            .scan(1, |acc, s| {
                *acc *= s.stride();
                Some(*acc)
            })
            .collect()
    }

    pub fn stage_dilations(&self) -> Vec<usize> {
        self.stages.iter().map(StageSpec::dilation).collect()
    }

    pub fn output_stride(&self) -> usize {
        *self.tap_strides().last().expect("five stages")
    }

    /// Default side-output/context width for this profile.
    pub fn default_head_width(&self) -> usize {
        match self.name {
            ProfileName::Mini => 32,
            ProfileName::Resnet50Dilated => MCI_WIDTH,
        }
    }
}

/// Per-channel normalization applied before the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Everything besides the backbone profile that fixes the network's shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub profile: ProfileName,
    /// Blocks per side of the distortion-adaptive grid.
    pub blocks: usize,
    pub da_kernel: usize,
    pub use_da: bool,
    pub use_mci: bool,
    /// Width of the compressed side features and of the context block.
    pub head_width: usize,
    pub normalization: Normalization,
    /// Apply the distortion-adaptive module after normalization instead of
    /// on the raw `[0, 1]` pixels.
    pub da_on_normalized: bool,
}

impl NetworkConfig {
    pub fn for_profile(profile: ProfileName) -> Self {
        Self {
            profile,
            blocks: DEFAULT_BLOCKS,
            da_kernel: DEFAULT_KERNEL,
            use_da: true,
            use_mci: true,
            head_width: BackboneProfile::from_name(profile).default_head_width(),
            normalization: Normalization::default(),
            da_on_normalized: false,
        }
    }

    pub fn backbone(&self) -> BackboneProfile {
        BackboneProfile::from_name(self.profile)
    }

    /// Check that an `height x width` input fits the block grid and the backbone stride.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let stride = self.backbone().output_stride();
        if height == 0 || width == 0 || height % stride != 0 || width % stride != 0 {
            return Err(DdsError::Configuration(format!(
                "input {width}x{height} is not divisible by the backbone stride {stride}"
            )));
        }
        if self.use_da && (height % self.blocks != 0 || width % self.blocks != 0) {
            return Err(DdsError::Configuration(format!(
                "input {width}x{height} is not divisible into {0}x{0} blocks",
                self.blocks
            )));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.da_kernel % 2 == 0 || self.head_width == 0 {
            return Err(DdsError::Configuration(format!(
                "blocks={} kernel={} head width={}",
                self.blocks, self.da_kernel, self.head_width
            )));
        }
        if self.normalization.std.iter().any(|&s| !(s > 0.0)) {
            return Err(DdsError::Configuration("normalization std must be positive".into()));
        }
        Ok(())
    }
}
