//! PNG reading and writing for images, masks and saliency maps.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::equirect::{BinaryMask, EquirectImage, Provenance, SaliencyMap};
use crate::error::{DdsError, Result};
use crate::tensor::Tensor;

/// Gray levels at or above this value are foreground when reading masks.
pub const MASK_THRESHOLD: u8 = 128;

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| DdsError::ImageIo {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| DdsError::io(dir, e)),
        None => Ok(()),
    }
}

fn save<P>(img: &ImageBuffer<P, Vec<u8>>, path: &Path) -> Result<()>
where
    P: image::Pixel<Subpixel = u8> + image::PixelWithColorType,
{
    ensure_parent(path)?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| DdsError::ImageIo {
            path: path.to_path_buf(),
            source,
        })
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn read_image(path: &Path) -> Result<EquirectImage> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = Tensor::from_fn(3, h, w, |c, y, x| {
        rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    });
    EquirectImage::new(pixels, Provenance::File(path.to_path_buf()))
}

pub fn write_image(path: &Path, image: &EquirectImage) -> Result<()> {
    let p = image.pixels();
    let img = RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([to_byte(p.get(0, y, x)), to_byte(p.get(1, y, x)), to_byte(p.get(2, y, x))])
    });
    save(&img, path)
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let gray = open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    if w == 0 || h == 0 {
        return Err(DdsError::MalformedImage(format!("{} is empty", path.display())));
    }
    Ok(BinaryMask::from_fn(h, w, |y, x| {
        gray.get_pixel(x as u32, y as u32)[0] >= MASK_THRESHOLD
    }))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    save(&img, path)
}

/// Saliency in `[0, 1]` read back from 8-bit gray levels.
pub fn read_saliency(path: &Path) -> Result<SaliencyMap> {
    let gray = open(path)?.to_luma8();
    let values = gray.pixels().map(|p| p[0] as f64 / 255.0).collect();
    SaliencyMap::new(gray.height() as usize, gray.width() as usize, values)
}

/// Write `round(255 * s)` as an 8-bit grayscale PNG.
pub fn write_saliency(path: &Path, map: &SaliencyMap) -> Result<()> {
    let w = map.width();
    let v = map.values();
    let img = GrayImage::from_fn(w as u32, map.height() as u32, |x, y| {
        Luma([to_byte(v[y as usize * w + x as usize])])
    });
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equirect::{synth_scene, Resolution, SceneSpec};

    #[test]
    fn image_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (img, mask) = synth_scene(3, &SceneSpec::default().with_resolution(Resolution::new(64, 32))).unwrap();
        let (ip, mp) = (dir.path().join("a/img.png"), dir.path().join("a/mask.png"));
        write_image(&ip, &img).unwrap();
        write_mask(&mp, &mask).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), mask);
        let back = read_image(&ip).unwrap();
        assert_eq!(back.provenance(), &Provenance::File(ip.clone()));
        assert!(back.pixels().max_abs_diff(img.pixels()) <= 0.5 / 255.0 + 1e-12);
        write_image(&ip, &back).unwrap();
        assert_eq!(read_image(&ip).unwrap().pixels(), back.pixels());
    }

    #[test]
    fn saliency_is_quantized_to_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let map = SaliencyMap::new(1, 4, vec![0.0, 0.2, 0.5, 1.0]).unwrap();
        let p = dir.path().join("s.png");
        write_saliency(&p, &map).unwrap();
        let back = read_saliency(&p).unwrap();
        let bytes: Vec<u8> = back.values().iter().map(|v| (v * 255.0).round() as u8).collect();
        assert_eq!(bytes, [0, 51, 128, 255]);
    }

    #[test]
    fn missing_file_reports_its_path() {
        let err = read_mask(Path::new("/nonexistent/m.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/m.png"));
    }
}
