use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::{Backbone, BackboneTrace};
use super::decoder::{Decoder, DecoderTrace};
use super::params::{ParamGroup, ParamSink, ParamSinkMut};
use super::profile::{NetworkConfig, Normalization, STAGES};
use crate::distortion::{da_backward, da_forward_grouped, DistortionKernels};
use crate::equirect::{EquirectImage, SaliencyMap};
use crate::error::{DdsError, Result};
use crate::nn::ops::{resize_bilinear, sigmoid};
use crate::tensor::{FeatureMap, Tensor};

/// All learnable tensors, partitioned into the distortion-adaptive kernels,
/// the backbone, and the per-side-output head layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `None` when the network is built without the distortion-adaptive module.
    pub da_kernels: Option<DistortionKernels>,
    pub backbone: Backbone,
    pub head: Decoder,
}

impl NetworkParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            da_kernels: self.da_kernels.as_ref().map(DistortionKernels::zeros_like),
            backbone: self.backbone.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Visit every tensor in a fixed order with its path and group.
    pub fn visit(&self, sink: &mut ParamSink<'_>) {
        if let Some(k) = &self.da_kernels {
            sink("da/kernels", ParamGroup::DistortionKernels, k.weights());
        }
        self.backbone.visit(sink);
        self.head.visit(sink);
    }

    pub fn visit_mut(&mut self, sink: &mut ParamSinkMut<'_>) {
        if let Some(k) = &mut self.da_kernels {
            sink("da/kernels", ParamGroup::DistortionKernels, k.weights_mut());
        }
        self.backbone.visit_mut(sink);
        self.head.visit_mut(sink);
    }

    /// Element-wise `self += other`; both must come from the same configuration.
    pub fn add_assign(&mut self, other: &NetworkParams) {
        let mut flat = Vec::new();
        other.visit(&mut |_, _, v| flat.push(v.to_vec()));
        let mut i = 0;
        self.visit_mut(&mut |_, _, v| {
            for (a, b) in v.iter_mut().zip(&flat[i]) {
                *a += b;
            }
            i += 1;
        });
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    /// Sum of squares per group.
    pub fn squared_norms(&self) -> Vec<(ParamGroup, f64)> {
        let mut out: Vec<(ParamGroup, f64)> = Vec::new();
        self.visit(&mut |_, g, v| {
            let s: f64 = v.iter().map(|x| x * x).sum();
            match out.iter_mut().find(|(k, _)| *k == g) {
                Some((_, acc)) => *acc += s,
                None => out.push((g, s)),
            }
        });
        out
    }
}

/// Five side-output logit maps (index 0 is side 1, the finest) and the final
/// saliency map at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SideOutputs {
    pub logits: Vec<FeatureMap>,
    pub final_map: SaliencyMap,
}

pub struct ForwardTrace {
    /// Input of the distortion-adaptive module, if present.
    da_input: Option<Tensor>,
    backbone: BackboneTrace,
    decoder: DecoderTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdsNetwork {
    pub config: NetworkConfig,
    pub params: NetworkParams,
}

fn normalize(x: &Tensor, n: &Normalization) -> Tensor {
    let mut out = x.clone();
    for c in 0..3 {
        let (m, s) = (n.mean[c], n.std[c]);
        out.channel_mut(c).iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    out
}

fn normalize_backward(up: &Tensor, n: &Normalization) -> Tensor {
    let mut out = up.clone();
    for c in 0..3 {
        let s = n.std[c];
        out.channel_mut(c).iter_mut().for_each(|v| *v /= s);
    }
    out
}

impl DdsNetwork {
    /// Fresh network; the distortion-adaptive kernels start at zero so the
    /// module is initially the identity.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profile = config.backbone();
        let da_kernels = if config.use_da {
            Some(DistortionKernels::zeros(config.blocks, config.da_kernel)?)
        } else {
            None
        };
        let backbone = Backbone::init(&profile, &mut rng);
        let head = Decoder::init(&profile.stage_widths(), config.head_width, config.use_mci, &mut rng);
        Ok(Self {
            config,
            params: NetworkParams {
                da_kernels,
                backbone,
                head,
            },
        })
    }

    pub fn from_parts(config: NetworkConfig, params: NetworkParams) -> Self {
        Self { config, params }
    }

    pub fn forward(&self, image: &EquirectImage) -> Result<SideOutputs> {
        Ok(self.forward_traced(image.pixels())?.0)
    }

    /// Backbone taps R1..R5 with their strides.
    pub fn features(&self, pixels: &Tensor) -> Result<Vec<FeatureMap>> {
        let (_, trace) = self.forward_traced(pixels)?;
        let h = pixels.height();
        Ok(trace
            .decoder
            .taps()
            .iter()
            .map(|t| FeatureMap::new(t.clone(), h / t.height()))
            .collect())
    }

    pub fn forward_traced(&self, pixels: &Tensor) -> Result<(SideOutputs, ForwardTrace)> {
        if pixels.channels() != 3 {
            return Err(DdsError::MalformedImage(format!(
                "network expects 3 channels, got {}",
                pixels.channels()
            )));
        }
        let (h, w) = (pixels.height(), pixels.width());
        self.config.check_input(h, w)?;
        let norm = &self.config.normalization;
        let da = |x: &Tensor| -> Result<Tensor> {
            match &self.params.da_kernels {
                Some(k) => da_forward_grouped(x, k),
                None => Ok(x.clone()),
            }
        };
        let (x, da_input) = if self.config.da_on_normalized {
            let n = normalize(pixels, norm);
            (da(&n)?, Some(n))
        } else {
            (normalize(&da(pixels)?, norm), Some(pixels.clone()))
        };
        let da_input = da_input.filter(|_| self.params.da_kernels.is_some());

        let (taps, backbone) = self.params.backbone.forward(&x)?;
        let strides: Vec<usize> = taps.iter().map(|t| h / t.height()).collect();
        let (sides, decoder) = self.params.head.forward(taps)?;
        let up = resize_bilinear(&sides[0], h, w).map(sigmoid);
        let final_map = SaliencyMap::from_tensor(&up)?;
        let logits = sides.into_iter().zip(strides).map(|(t, s)| FeatureMap::new(t, s)).collect();
        Ok((
            SideOutputs { logits, final_map },
            ForwardTrace {
                da_input,
                backbone,
                decoder,
            },
        ))
    }

    /// Parameter gradients for upstream gradients `side_grads[s]` on each
    /// side-output logit map.
    pub fn backward(&self, trace: &ForwardTrace, side_grads: &[Tensor]) -> Result<NetworkParams> {
        if side_grads.len() != STAGES {
            return Err(DdsError::Configuration(format!(
                "expected {STAGES} side gradients, got {}",
                side_grads.len()
            )));
        }
        let mut grad = self.params.zeros_like();
        let tap_grads = self.params.head.backward(&trace.decoder, side_grads, &mut grad.head)?;
        let want_input = self.params.da_kernels.is_some();
        let dx = self
            .params
            .backbone
            .backward(&trace.backbone, tap_grads, &mut grad.backbone, want_input)?;
        if let (Some(k), Some(g), Some(dx), Some(input)) = (
            &self.params.da_kernels,
            grad.da_kernels.as_mut(),
            dx,
            &trace.da_input,
        ) {
            let norm = &self.config.normalization;
            let up = if self.config.da_on_normalized { dx } else { normalize_backward(&dx, norm) };
            da_backward(input, k, &up, g, false)?;
        }
        Ok(grad)
    }
}
