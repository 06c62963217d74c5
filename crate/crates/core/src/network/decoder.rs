//! Progressive decoder: per-tap 1x1 compression, the context block on the
//! deepest tap, and coarse-to-fine fusion producing one logit map per side.

use rand::Rng;

use super::params::{ParamGroup, ParamSink, ParamSinkMut};
use super::profile::STAGES;
use crate::context::ContextIntegration;
use crate::error::Result;
use crate::nn::ops::{relu, relu_backward, resize_bilinear, resize_bilinear_backward};
use crate::nn::{Conv2d, ConvShape};
use crate::tensor::Tensor;

pub(crate) fn compress_shape(tap_channels: usize, width: usize) -> ConvShape {
    ConvShape::pointwise(tap_channels, width)
}

/// Fusion of the compressed tap with the upsampled coarser saliency channel.
pub(crate) fn fuse_shape(width: usize) -> ConvShape {
    ConvShape::same(width + 1, width, 3, 1)
}

pub(crate) fn predict_shape(width: usize) -> ConvShape {
    ConvShape::pointwise(width, 1)
}

/// Stand-in for the context block when it is ablated.
pub(crate) fn plain_context_shape(width: usize) -> ConvShape {
    ConvShape::same(width, width, 3, 1)
}

fn lecun<R: Rng + ?Sized>(shape: ConvShape, rng: &mut R) -> Conv2d {
    let fan_in = (shape.in_per_group() * shape.kernel * shape.kernel) as f64;
    Conv2d::normal(shape, (1.0 / fan_in).sqrt(), rng)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextLayer {
    Mci(ContextIntegration),
    Plain(Conv2d),
}

impl ContextLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            ContextLayer::Mci(m) => m.forward(x),
            ContextLayer::Plain(c) => c.forward(x),
        }
    }

    fn backward(&self, x: &Tensor, up: &Tensor, grad: &mut ContextLayer) -> Result<Tensor> {
        let d = match (self, grad) {
            (ContextLayer::Mci(m), ContextLayer::Mci(g)) => m.backward(x, up, g, true)?,
            (ContextLayer::Plain(c), ContextLayer::Plain(g)) => c.backward(x, up, g, true)?,
            _ => unreachable!("gradient mirrors the layer"),
        };
        Ok(d.expect("input gradient requested"))
    }

    fn zeros_like(&self) -> Self {
        match self {
            ContextLayer::Mci(m) => ContextLayer::Mci(m.zeros_like()),
            ContextLayer::Plain(c) => ContextLayer::Plain(c.zeros_like()),
        }
    }
}

/// Side output 5: compression, context block, 1-channel prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepestHead {
    pub compress: Conv2d,
    pub context: ContextLayer,
    pub predict: Conv2d,
}

/// Side outputs 1-4: compression, fusion with the coarser saliency, prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    pub compress: Conv2d,
    pub fuse: Conv2d,
    pub predict: Conv2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    /// `fusion[s - 1]` belongs to side output `s` for `s` in 1..=4.
    pub fusion: Vec<FusionHead>,
    pub deepest: DeepestHead,
}

struct FusionTrace {
    compressed: Tensor,
    concat: Tensor,
    fused: Tensor,
    coarse_hw: (usize, usize),
}

pub(super) struct DecoderTrace {
    taps: Vec<Tensor>,
    deep_compressed: Tensor,
    deep_context: Tensor,
    /// Indexed like `Decoder::fusion`.
    fusion: Vec<FusionTrace>,
}

impl DecoderTrace {
    pub(super) fn taps(&self) -> &[Tensor] {
        &self.taps
    }
}

impl Decoder {
    pub fn init<R: Rng + ?Sized>(tap_channels: &[usize], width: usize, use_mci: bool, rng: &mut R) -> Self {
        assert_eq!(tap_channels.len(), STAGES);
        let fusion = tap_channels[..STAGES - 1]
            .iter()
            .map(|&c| FusionHead {
                compress: lecun(compress_shape(c, width), rng),
                fuse: Conv2d::he_normal(fuse_shape(width), rng),
                predict: lecun(predict_shape(width), rng),
            })
            .collect();
        let context = if use_mci {
            ContextLayer::Mci(ContextIntegration::he_normal(width, width, rng))
        } else {
            ContextLayer::Plain(lecun(plain_context_shape(width), rng))
        };
        let deepest = DeepestHead {
            compress: lecun(compress_shape(tap_channels[STAGES - 1], width), rng),
            context,
            predict: lecun(predict_shape(width), rng),
        };
        Self { fusion, deepest }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fusion: self
                .fusion
                .iter()
                .map(|h| FusionHead {
                    compress: h.compress.zeros_like(),
                    fuse: h.fuse.zeros_like(),
                    predict: h.predict.zeros_like(),
                })
                .collect(),
            deepest: DeepestHead {
                compress: self.deepest.compress.zeros_like(),
                context: self.deepest.context.zeros_like(),
                predict: self.deepest.predict.zeros_like(),
            },
        }
    }

    /// Logit maps for sides 1..=5 (index 0 is side 1).
    pub(super) fn forward(&self, taps: Vec<Tensor>) -> Result<(Vec<Tensor>, DecoderTrace)> {
        let deep = &self.deepest;
        let deep_compressed = deep.compress.forward(&taps[STAGES - 1])?;
        let deep_context = deep.context.forward(&deep_compressed)?;
        let mut sides = vec![Tensor::zeros(0, 0, 0); STAGES];
        sides[STAGES - 1] = deep.predict.forward(&deep_context)?;

        let mut fusion: Vec<Option<FusionTrace>> = (0..STAGES - 1).map(|_| None).collect();
        for s in (0..STAGES - 1).rev() {
            let head = &self.fusion[s];
            let tap = &taps[s];
            let coarse = &sides[s + 1];
            let coarse_hw = (coarse.height(), coarse.width());
            let up = resize_bilinear(coarse, tap.height(), tap.width());
            let compressed = head.compress.forward(tap)?;
            let concat = Tensor::concat_channels(&[&compressed, &up])?;
            let fused = relu(&head.fuse.forward(&concat)?);
            sides[s] = head.predict.forward(&fused)?;
            fusion[s] = Some(FusionTrace {
                compressed,
                concat,
                fused,
                coarse_hw,
            });
        }
        let trace = DecoderTrace {
            taps,
            deep_compressed,
            deep_context,
            fusion: fusion.into_iter().map(|t| t.expect("filled")).collect(),
        };
        Ok((sides, trace))
    }

    /// Backpropagate per-side logit gradients; returns the gradient at each tap.
    pub(super) fn backward(
        &self,
        trace: &DecoderTrace,
        side_grads: &[Tensor],
        grad: &mut Decoder,
    ) -> Result<Vec<Tensor>> {
        let mut tap_grads = Vec::with_capacity(STAGES);
        let mut carry: Option<Tensor> = None;
        for s in 0..STAGES - 1 {
            let head = &self.fusion[s];
            let g_head = &mut grad.fusion[s];
            let t = &trace.fusion[s];
            let mut g_side = side_grads[s].clone();
            if let Some(c) = carry.take() {
                g_side.add_assign(&c);
            }
            let d_fused = head
                .predict
                .backward(&t.fused, &g_side, &mut g_head.predict, true)?
                .expect("input gradient requested");
            let d_pre = relu_backward(&t.fused, &d_fused);
            let d_concat = head
                .fuse
                .backward(&t.concat, &d_pre, &mut g_head.fuse, true)?
                .expect("input gradient requested");
            let width = t.compressed.channels();
            let d_compressed = d_concat.slice_channels(0, width);
            let d_up = d_concat.slice_channels(width, 1);
            let d_tap = head
                .compress
                .backward(&trace.taps[s], &d_compressed, &mut g_head.compress, true)?
                .expect("input gradient requested");
            tap_grads.push(d_tap);
            carry = Some(resize_bilinear_backward(&d_up, t.coarse_hw.0, t.coarse_hw.1));
        }
        let deep = &self.deepest;
        let g_deep = &mut grad.deepest;
        let mut g_side = side_grads[STAGES - 1].clone();
        if let Some(c) = carry {
            g_side.add_assign(&c);
        }
        let d_context = deep
            .predict
            .backward(&trace.deep_context, &g_side, &mut g_deep.predict, true)?
            .expect("input gradient requested");
        let d_compressed = deep
            .context
            .backward(&trace.deep_compressed, &d_context, &mut g_deep.context)?;
        let d_tap = deep
            .compress
            .backward(&trace.taps[STAGES - 1], &d_compressed, &mut g_deep.compress, true)?
            .expect("input gradient requested");
        tap_grads.push(d_tap);
        Ok(tap_grads)
    }

    pub(super) fn visit(&self, sink: &mut ParamSink<'_>) {
        let mut conv = |path: String, group: ParamGroup, c: &Conv2d| {
            sink(&format!("{path}/weight"), group, &c.weight);
            if !c.bias.is_empty() {
                sink(&format!("{path}/bias"), group, &c.bias);
            }
        };
        for (i, h) in self.fusion.iter().enumerate() {
            let s = i + 1;
            let g = ParamGroup::Side(s);
            conv(format!("side{s}/compress"), g, &h.compress);
            conv(format!("side{s}/fuse"), g, &h.fuse);
            conv(format!("side{s}/predict"), g, &h.predict);
        }
        let g = ParamGroup::Side(STAGES);
        conv(format!("side{STAGES}/compress"), g, &self.deepest.compress);
        match &self.deepest.context {
            ContextLayer::Mci(m) => {
                for (b, c) in m.branches().iter().enumerate() {
                    conv(format!("side{STAGES}/context/branch{b}"), g, c);
                }
            }
            ContextLayer::Plain(c) => conv(format!("side{STAGES}/context/plain"), g, c),
        }
        conv(format!("side{STAGES}/predict"), g, &self.deepest.predict);
    }

    pub(super) fn visit_mut(&mut self, sink: &mut ParamSinkMut<'_>) {
        let mut conv = |path: String, group: ParamGroup, c: &mut Conv2d| {
            sink(&format!("{path}/weight"), group, &mut c.weight);
            if !c.bias.is_empty() {
                sink(&format!("{path}/bias"), group, &mut c.bias);
            }
        };
        for (i, h) in self.fusion.iter_mut().enumerate() {
            let s = i + 1;
            let g = ParamGroup::Side(s);
            conv(format!("side{s}/compress"), g, &mut h.compress);
            conv(format!("side{s}/fuse"), g, &mut h.fuse);
            conv(format!("side{s}/predict"), g, &mut h.predict);
        }
        let g = ParamGroup::Side(STAGES);
        conv(format!("side{STAGES}/compress"), g, &mut self.deepest.compress);
        match &mut self.deepest.context {
            ContextLayer::Mci(m) => {
                for (b, c) in m.branches_mut().iter_mut().enumerate() {
                    conv(format!("side{STAGES}/context/branch{b}"), g, c);
                }
            }
            ContextLayer::Plain(c) => conv(format!("side{STAGES}/context/plain"), g, c),
        }
        conv(format!("side{STAGES}/predict"), g, &mut self.deepest.predict);
    }
}
