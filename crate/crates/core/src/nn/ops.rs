//! Parameter-free layers and the per-channel affine layer, each with its adjoint.

use crate::error::{DdsError, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through a rectifier, given the rectifier's *output*.
pub fn relu_backward(activated: &Tensor, upstream: &Tensor) -> Tensor {
    let mut g = upstream.clone();
    for (d, a) in g.data_mut().iter_mut().zip(activated.data()) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    g
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-channel `scale * x + shift`; the inference form of batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAffine {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl ChannelAffine {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            scale: vec![0.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        for c in 0..x.channels() {
            let (s, b) = (self.scale[c], self.shift[c]);
            y.channel_mut(c).iter_mut().for_each(|v| *v = *v * s + b);
        }
        y
    }

    pub fn backward(&self, x: &Tensor, upstream: &Tensor, grad: &mut ChannelAffine) -> Tensor {
        let mut dx = upstream.clone();
        for c in 0..x.channels() {
            let up = upstream.channel(c);
            grad.shift[c] += up.iter().sum::<f64>();
            grad.scale[c] += up.iter().zip(x.channel(c)).map(|(u, v)| u * v).sum::<f64>();
            let s = self.scale[c];
            dx.channel_mut(c).iter_mut().for_each(|v| *v *= s);
        }
        dx
    }
}

/// Max pooling with implicit `-inf` padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl MaxPool {
    pub fn output_hw(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let h = height + 2 * self.padding;
        let w = width + 2 * self.padding;
        if h < self.kernel || w < self.kernel {
            return None;
        }
        Some(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    /// Returns the pooled tensor and the flat input index each output came from.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        let (oh, ow) = self
            .output_hw(x.height(), x.width())
            .ok_or_else(|| DdsError::ShapeMismatch("input smaller than the pooling window".into()))?;
        let mut out = Tensor::zeros(x.channels(), oh, ow);
        let mut argmax = Vec::with_capacity(out.data().len());
        let (h, w) = (x.height() as isize, x.width() as isize);
        for c in 0..x.channels() {
            let plane = x.channel(c);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ky in 0..self.kernel {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        for kx in 0..self.kernel {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w {
                                continue;
                            }
                            let idx = (iy * w + ix) as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.set(c, oy, ox, best);
                    argmax.push(c * x.plane_len() + best_idx);
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn backward(input_shape: (usize, usize, usize), argmax: &[usize], upstream: &Tensor) -> Tensor {
        let (c, h, w) = input_shape;
        let mut dx = Tensor::zeros(c, h, w);
        for (g, &idx) in upstream.data().iter().zip(argmax) {
            dx.data_mut()[idx] += g;
        }
        dx
    }
}

/// Source taps along one axis for half-pixel-centred bilinear resampling.
#[derive(Debug, Clone, Copy)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            if src == dst {
                return Tap { lo: d, hi: d, frac: 0.0 };
            }
            let pos = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let frac = if hi == lo { 0.0 } else { pos - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Bilinear resize of every channel to `height x width`.
pub fn resize_bilinear(x: &Tensor, height: usize, width: usize) -> Tensor {
    if (x.height(), x.width()) == (height, width) {
        return x.clone();
    }
    let ty = taps(x.height(), height);
    let tx = taps(x.width(), width);
    let sw = x.width();
    let mut out = Tensor::zeros(x.channels(), height, width);
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for (oy, t) in ty.iter().enumerate() {
            let r0 = &src[t.lo * sw..(t.lo + 1) * sw];
            let r1 = &src[t.hi * sw..(t.hi + 1) * sw];
            for (ox, s) in tx.iter().enumerate() {
                let top = r0[s.lo] + (r0[s.hi] - r0[s.lo]) * s.frac;
                let bottom = r1[s.lo] + (r1[s.hi] - r1[s.lo]) * s.frac;
                dst[oy * width + ox] = top + (bottom - top) * t.frac;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub fn resize_bilinear_backward(upstream: &Tensor, height: usize, width: usize) -> Tensor {
    if (upstream.height(), upstream.width()) == (height, width) {
        return upstream.clone();
    }
    let ty = taps(height, upstream.height());
    let tx = taps(width, upstream.width());
    let ow = upstream.width();
    let mut dx = Tensor::zeros(upstream.channels(), height, width);
    for c in 0..upstream.channels() {
        let up = upstream.channel(c);
        let dst = dx.channel_mut(c);
        for (oy, t) in ty.iter().enumerate() {
            for (ox, s) in tx.iter().enumerate() {
                let g = up[oy * ow + ox];
                let gt = g * (1.0 - t.frac);
                let gb = g * t.frac;
                dst[t.lo * width + s.lo] += gt * (1.0 - s.frac);
                dst[t.lo * width + s.hi] += gt * s.frac;
                dst[t.hi * width + s.lo] += gb * (1.0 - s.frac);
                dst[t.hi * width + s.hi] += gb * s.frac;
            }
        }
    }
    dx
}

/// Nearest-neighbour source index for each destination index (half-pixel centres).
pub fn nearest_indices(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * src as f64 / dst as f64).floor() as usize;
            pos.min(src - 1)
        })
        .collect()
}
