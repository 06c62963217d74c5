//! 2-D convolution (cross-correlation) with stride, dilation, zero padding and
//! channel groups, evaluated through im2col + GEMM, with its exact adjoint.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gemm::{gemm, Mat};
use crate::error::{DdsError, Result};
use crate::tensor::Tensor;

/// Layer geometry, independent of any weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvShape {
    /// Stride-1, "same"-padded square convolution.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: dilation * (kernel / 2),
            dilation,
            groups: 1,
            bias: true,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::same(in_channels, out_channels, 1, 1)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Rows of one group's im2col matrix.
    fn patch_len(&self) -> usize {
        self.in_per_group() * self.kernel * self.kernel
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + if self.bias { self.out_channels } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0
            || self.kernel == 0
            || self.stride == 0
            || self.dilation == 0
            || self.in_channels % self.groups != 0
            || self.out_channels % self.groups != 0
        {
            return Err(DdsError::Configuration(format!(
                "invalid convolution geometry {self:?}"
            )));
        }
        Ok(())
    }

    /// Output spatial size, or `None` when the dilated kernel does not fit.
    pub fn output_hw(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let h = height + 2 * self.padding;
        let w = width + 2 * self.padding;
        if h < span || w < span {
            return None;
        }
        Some(((h - span) / self.stride + 1, (w - span) / self.stride + 1))
    }

    /// Multiply-accumulate count for one forward pass at the given input size.
    pub fn macs(&self, height: usize, width: usize) -> u64 {
        match self.output_hw(height, width) {
            Some((oh, ow)) => (oh * ow * self.out_channels * self.patch_len()) as u64,
            None => 0,
        }
    }

    fn is_plain_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Convolution weights laid out as `[out][in / groups][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub shape: ConvShape,
    pub weight: Vec<f64>,
    /// Empty when the layer has no bias.
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(shape: ConvShape) -> Self {
        Self {
            shape,
            weight: vec![0.0; shape.weight_len()],
            bias: vec![0.0; if shape.bias { shape.out_channels } else { 0 }],
        }
    }

    /// He-normal weights for a rectified input, zero bias.
    pub fn he_normal<R: Rng + ?Sized>(shape: ConvShape, rng: &mut R) -> Self {
        let fan_in = shape.patch_len() as f64;
        Self::normal(shape, (2.0 / fan_in).sqrt(), rng)
    }

    pub fn normal<R: Rng + ?Sized>(shape: ConvShape, std: f64, rng: &mut R) -> Self {
        let mut conv = Self::zeros(shape);
        for w in &mut conv.weight {
            let z: f64 = StandardNormal.sample(rng);
            *w = z * std;
        }
        conv
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn output_hw(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.shape.output_hw(height, width).ok_or_else(|| {
            DdsError::ShapeMismatch(format!(
                "{height}x{width} input is smaller than the {}x{} kernel footprint (dilation {})",
                self.shape.kernel, self.shape.kernel, self.shape.dilation
            ))
        })
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize)> {
        if x.channels() != self.shape.in_channels {
            return Err(DdsError::ShapeMismatch(format!(
                "convolution expects {} input channels, got {}",
                self.shape.in_channels,
                x.channels()
            )));
        }
        self.output_hw(x.height(), x.width())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (oh, ow) = self.check_input(x)?;
        let s = &self.shape;
        let opg = s.out_per_group();
        let patch = s.patch_len();
        let plane = oh * ow;
        let mut out = Tensor::zeros(s.out_channels, oh, ow);
        let mut cols = Vec::new();
        for g in 0..s.groups {
            let col = group_columns(x, s, g, oh, ow, &mut cols);
            let w = &self.weight[g * opg * patch..(g + 1) * opg * patch];
            let y = &mut out.data_mut()[g * opg * plane..(g + 1) * opg * plane];
            gemm(Mat::new(w, opg, patch), Mat::new(col, patch, plane), 0.0, y);
        }
        if s.bias {
            for (c, b) in self.bias.iter().enumerate() {
                out.channel_mut(c).iter_mut().for_each(|v| *v += b);
            }
        }
        Ok(out)
    }

    /// Accumulate parameter gradients into `grad` and return the gradient
    /// with respect to the input when `want_input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        upstream: &Tensor,
        grad: &mut Conv2d,
        want_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let (oh, ow) = self.check_input(x)?;
        let s = &self.shape;
        if upstream.shape() != (s.out_channels, oh, ow) {
            return Err(DdsError::ShapeMismatch(format!(
                "upstream gradient {:?} does not match convolution output {:?}",
                upstream.shape(),
                (s.out_channels, oh, ow)
            )));
        }
        let opg = s.out_per_group();
        let patch = s.patch_len();
        let plane = oh * ow;
        if s.bias {
            for (c, b) in grad.bias.iter_mut().enumerate() {
                *b += upstream.channel(c).iter().sum::<f64>();
            }
        }
        let mut dx = want_input_grad.then(|| Tensor::zeros(x.channels(), x.height(), x.width()));
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        for g in 0..s.groups {
            let dy = &upstream.data()[g * opg * plane..(g + 1) * opg * plane];
            {
                let col = group_columns(x, s, g, oh, ow, &mut cols);
                let dw = &mut grad.weight[g * opg * patch..(g + 1) * opg * patch];
                gemm(Mat::new(dy, opg, plane), Mat::t(col, patch, plane), 1.0, dw);
            }
            if let Some(dx) = dx.as_mut() {
                let w = &self.weight[g * opg * patch..(g + 1) * opg * patch];
                dcols.clear();
                dcols.resize(patch * plane, 0.0);
                gemm(Mat::t(w, opg, patch), Mat::new(dy, opg, plane), 0.0, &mut dcols);
                scatter_columns(&dcols, s, g, oh, ow, dx);
            }
        }
        Ok(dx)
    }

    pub fn param_count(&self) -> usize {
        self.shape.param_count()
    }
}

/// im2col for one group; returns either the input itself (plain 1x1) or the
/// filled scratch buffer, shaped `[patch_len, oh * ow]`.
fn group_columns<'a>(
    x: &'a Tensor,
    s: &ConvShape,
    group: usize,
    oh: usize,
    ow: usize,
    scratch: &'a mut Vec<f64>,
) -> &'a [f64] {
    let ipg = s.in_per_group();
    if s.is_plain_pointwise() {
        let n = x.plane_len();
        return &x.data()[group * ipg * n..(group + 1) * ipg * n];
    }
    let (h, w) = (x.height() as isize, x.width() as isize);
    let k = s.kernel;
    let plane = oh * ow;
    scratch.clear();
    scratch.resize(s.patch_len() * plane, 0.0);
    for ci in 0..ipg {
        let src = x.channel(group * ipg + ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut scratch[row * plane..(row + 1) * plane];
                let dy = (ky * s.dilation) as isize - s.padding as isize;
                let dx = (kx * s.dilation) as isize - s.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * s.stride) as isize + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src_row = &src[(iy * w) as usize..((iy + 1) * w) as usize];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if s.stride == 1 {
                        // contiguous run of valid columns
                        let lo = (-dx).max(0) as usize;
                        let hi = ((w - dx).min(ow as isize)).max(0) as usize;
                        if lo < hi {
                            let start = (lo as isize + dx) as usize;
                            dst_row[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                        }
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s.stride) as isize + dx;
                            if ix >= 0 && ix < w {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    scratch
}

/// Adjoint of [`group_columns`]: scatter-add column gradients into `dx`.
fn scatter_columns(dcols: &[f64], s: &ConvShape, group: usize, oh: usize, ow: usize, dx: &mut Tensor) {
    let ipg = s.in_per_group();
    let plane = oh * ow;
    if s.is_plain_pointwise() {
        let n = dx.plane_len();
        let dst = &mut dx.data_mut()[group * ipg * n..(group + 1) * ipg * n];
        for (d, v) in dst.iter_mut().zip(dcols) {
            *d += v;
        }
        return;
    }
    let (h, w) = (dx.height() as isize, dx.width() as isize);
    let k = s.kernel;
    for ci in 0..ipg {
        let dst = dx.channel_mut(group * ipg + ci);
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &dcols[row * plane..(row + 1) * plane];
                let dy = (ky * s.dilation) as isize - s.padding as isize;
                let ddx = (kx * s.dilation) as isize - s.padding as isize;
                for oy in 0..oh {
                    let iy = (oy * s.stride) as isize + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst_row = &mut dst[(iy * w) as usize..((iy + 1) * w) as usize];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, v) in src_row.iter().enumerate() {
                        let ix = (ox * s.stride) as isize + ddx;
                        if ix >= 0 && ix < w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
