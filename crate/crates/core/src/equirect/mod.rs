//! Equirectangular rasters: images, masks, saliency maps, resampling,
//! augmentation and the block grid used by the distortion-adaptive module.

pub(crate) mod blocks;
pub mod synth;

use std::fmt;
use std::path::PathBuf;

pub use blocks::{cut_blocks, stitch_blocks, BlockGrid};
pub use synth::{render_caps, synth_scene, Cap, SceneSpec};

use crate::error::{DdsError, Result};
use crate::nn::ops::{nearest_indices, resize_bilinear};
use crate::tensor::Tensor;

/// Output size of [`canonicalize`]; equirectangular rasters are twice as wide as tall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub const CANONICAL: Resolution = Resolution {
        width: 512,
        height: 256,
    };

    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self::CANONICAL
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Where an image came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    File(PathBuf),
    Synthetic(u64),
    Derived,
}

/// Three-channel raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquirectImage {
    pixels: Tensor,
    provenance: Provenance,
}

impl EquirectImage {
    pub fn new(pixels: Tensor, provenance: Provenance) -> Result<Self> {
        if pixels.channels() != 3 {
            return Err(DdsError::MalformedImage(format!(
                "expected 3 channels, got {}",
                pixels.channels()
            )));
        }
        if pixels.height() == 0 || pixels.width() == 0 {
            return Err(DdsError::MalformedImage("empty raster".into()));
        }
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DdsError::MalformedImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { pixels, provenance })
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor {
        self.pixels
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.width(), self.height())
    }

    pub fn hflipped(&self) -> EquirectImage {
        EquirectImage {
            pixels: flip_tensor(&self.pixels),
            provenance: self.provenance.clone(),
        }
    }
}

/// Strictly binary ground-truth raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DdsError::ShapeMismatch(format!(
                "{} values cannot fill a {height}x{width} mask",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(DdsError::Supervision("mask values must be 0 or 1".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(y, x)));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = u8::from(value);
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.foreground_count() as f64 / self.data.len() as f64
    }

    pub fn has_foreground(&self) -> bool {
        self.data.contains(&1)
    }

    pub fn resize_nearest(&self, height: usize, width: usize) -> BinaryMask {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let ys = nearest_indices(self.height, height);
        let xs = nearest_indices(self.width, width);
        let mut data = Vec::with_capacity(height * width);
        for &sy in &ys {
            for &sx in &xs {
                data.push(self.data[sy * self.width + sx]);
            }
        }
        BinaryMask { height, width, data }
    }

    pub fn hflipped(&self) -> BinaryMask {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        BinaryMask {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// The mask as a single-channel 0/1 tensor.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Tensor::from_vec(1, self.height, self.width, data).expect("shape is consistent")
    }
}

/// Predicted saliency in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(DdsError::ShapeMismatch(format!(
                "{} values cannot fill a {height}x{width} saliency map",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DdsError::Numerical(format!("saliency value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, values })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.channels() != 1 {
            return Err(DdsError::ShapeMismatch(format!(
                "saliency map needs one channel, got {}",
                t.channels()
            )));
        }
        Self::new(t.height(), t.width(), t.data().to_vec())
    }

    /// A binary mask read as a perfect prediction.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            values: mask.data().iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hflipped(&self) -> SaliencyMap {
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.values.chunks(self.width) {
            values.extend(row.iter().rev());
        }
        SaliencyMap {
            height: self.height,
            width: self.width,
            values,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(1, self.height, self.width, self.values.clone()).expect("shape is consistent")
    }

    pub fn resize_bilinear(&self, height: usize, width: usize) -> SaliencyMap {
        let t = resize_bilinear(&self.to_tensor(), height, width);
        SaliencyMap {
            height,
            width,
            values: t.into_vec().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Bilinearly resample a 3-channel raster of any size and value range to
/// `target`, clamping into `[0, 1]`.
pub fn canonicalize(image: &Tensor, target: Resolution) -> Result<EquirectImage> {
    if image.channels() != 3 {
        return Err(DdsError::MalformedImage(format!(
            "expected 3 channels, got {}",
            image.channels()
        )));
    }
    if image.height() == 0 || image.width() == 0 {
        return Err(DdsError::MalformedImage("empty raster".into()));
    }
    if target.height == 0 || target.width != 2 * target.height {
        return Err(DdsError::Configuration(format!(
            "target {target} is not a 2:1 equirectangular size"
        )));
    }
    let resized = resize_bilinear(image, target.height, target.width);
    EquirectImage::new(resized.map(|v| v.clamp(0.0, 1.0)), Provenance::Derived)
}

/// [`canonicalize`] that keeps the source's provenance.
pub fn canonicalize_image(image: &EquirectImage, target: Resolution) -> Result<EquirectImage> {
    let mut out = canonicalize(image.pixels(), target)?;
    out.provenance = image.provenance.clone();
    Ok(out)
}

/// Mirror image and mask about the vertical axis.
pub fn hflip(image: &EquirectImage, mask: &BinaryMask) -> Result<(EquirectImage, BinaryMask)> {
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(DdsError::PairedData(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok((image.hflipped(), mask.hflipped()))
}

pub(crate) fn flip_tensor(t: &Tensor) -> Tensor {
    let w = t.width();
    Tensor::from_fn(t.channels(), t.height(), w, |c, y, x| t.get(c, y, w - 1 - x))
}
