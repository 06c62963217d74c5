//! Synthetic equirectangular scenes made of spherical caps.
//!
//! Each cap is a disc on the unit sphere. Rasterised through the
//! equirectangular mapping it keeps its round shape near the equator and
//! smears into a wide band near the poles, which is exactly the projection
//! distortion the network has to cope with.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BinaryMask, EquirectImage, Provenance, Resolution};
use crate::error::{DdsError, Result};
use crate::tensor::Tensor;

/// A spherical cap, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cap {
    pub lon_deg: f64,
    pub lat_deg: f64,
    pub radius_deg: f64,
    pub color: [f64; 3],
}

impl Cap {
    pub fn new(lon_deg: f64, lat_deg: f64, radius_deg: f64) -> Self {
        Self {
            lon_deg,
            lat_deg,
            radius_deg,
            color: [1.0, 1.0, 1.0],
        }
    }

    fn unit_vector(&self) -> [f64; 3] {
        unit_vector(self.lon_deg.to_radians(), self.lat_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub resolution: Resolution,
    /// Inclusive range of caps per scene.
    pub caps: (usize, usize),
    /// Inclusive range of angular radii in degrees.
    pub radius_deg: (f64, f64),
    /// Cap centres are drawn with `|latitude| <= max_abs_lat_deg`.
    pub max_abs_lat_deg: f64,
    /// Amplitude of the uniform per-pixel noise.
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            resolution: Resolution::CANONICAL,
            caps: (1, 3),
            radius_deg: (10.0, 30.0),
            max_abs_lat_deg: 80.0,
            noise: 0.03,
        }
    }
}

impl SceneSpec {
    pub fn with_resolution(mut self, resolution: Resolution) -> Self {
        self.resolution = resolution;
        self
    }

    fn validate(&self) -> Result<()> {
        let Resolution { width, height } = self.resolution;
        if width == 0 || height == 0 {
            return Err(DdsError::DegenerateSpec("zero-sized raster".into()));
        }
        let (lo, hi) = self.caps;
        if lo == 0 || hi < lo {
            return Err(DdsError::DegenerateSpec(format!("cap count range {lo}..={hi}")));
        }
        let (rlo, rhi) = self.radius_deg;
        // a cap wider than one pixel pitch always contains a pixel centre
        let pitch = 180.0 / height as f64;
        if !(rlo > pitch && rhi >= rlo && rhi < 180.0) {
            return Err(DdsError::DegenerateSpec(format!(
                "radius range {rlo}..={rhi} degrees (pixel pitch is {pitch:.3})"
            )));
        }
        if !(0.0..=90.0).contains(&self.max_abs_lat_deg) || !(self.noise >= 0.0) {
            return Err(DdsError::DegenerateSpec("latitude bound or noise out of range".into()));
        }
        Ok(())
    }
}

fn unit_vector(lon: f64, lat: f64) -> [f64; 3] {
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

/// Great-circle angle between two unit vectors, accurate at all separations.
fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let cos = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    sin.atan2(cos)
}

/// `(longitude, latitude)` in radians of the centre of pixel `(row, col)`.
pub fn pixel_lon_lat(row: usize, col: usize, resolution: Resolution) -> (f64, f64) {
    let lon = (col as f64 + 0.5) / resolution.width as f64 * 2.0 * PI - PI;
    let lat = PI / 2.0 - (row as f64 + 0.5) / resolution.height as f64 * PI;
    (lon, lat)
}

/// Index of the last cap covering each pixel, row-major.
fn cover(caps: &[Cap], resolution: Resolution) -> Vec<Option<usize>> {
    let centres: Vec<_> = caps.iter().map(Cap::unit_vector).collect();
    let radii: Vec<_> = caps.iter().map(|c| c.radius_deg.to_radians()).collect();
    let mut out = Vec::with_capacity(resolution.pixels());
    for row in 0..resolution.height {
        for col in 0..resolution.width {
            let (lon, lat) = pixel_lon_lat(row, col, resolution);
            let p = unit_vector(lon, lat);
            let hit = centres
                .iter()
                .zip(&radii)
                .rposition(|(c, r)| angle_between(p, *c) < *r);
            out.push(hit);
        }
    }
    out
}

/// Union of the caps as an equirectangular mask.
pub fn render_caps(caps: &[Cap], resolution: Resolution) -> BinaryMask {
    let covered = cover(caps, resolution);
    let data = covered.iter().map(|c| u8::from(c.is_some())).collect();
    BinaryMask::new(resolution.height, resolution.width, data).expect("shape is consistent")
}

fn saturated_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    let mut color = [0.0; 3];
    let strong = rng.random_range(0..3);
    for (k, c) in color.iter_mut().enumerate() {
        *c = if k == strong {
            rng.random_range(0.85..1.0)
        } else {
            rng.random_range(0.0..0.35)
        };
    }
    color
}

/// Deterministic scene for `seed`: image plus the union-of-caps mask.
pub fn synth_scene(seed: u64, spec: &SceneSpec) -> Result<(EquirectImage, BinaryMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(spec.caps.0..=spec.caps.1);
    let lat_bound = spec.max_abs_lat_deg.to_radians().sin();
    let caps: Vec<Cap> = (0..count)
        .map(|_| {
            let lon = rng.random_range(-180.0..180.0);
            // uniform in area over the allowed latitude band
            let lat = if lat_bound > 0.0 {
                rng.random_range(-lat_bound..=lat_bound).asin().to_degrees()
            } else {
                0.0
            };
            let radius = rng.random_range(spec.radius_deg.0..=spec.radius_deg.1);
            Cap {
                lon_deg: lon,
                lat_deg: lat,
                radius_deg: radius,
                color: saturated_color(&mut rng),
            }
        })
        .collect();

    let res = spec.resolution;
    let top: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
    let bottom: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.6));
    let phase = rng.random_range(0.0..2.0 * PI);
    let covered = cover(&caps, res);
    let mut pixels = Tensor::zeros(3, res.height, res.width);
    for row in 0..res.height {
        let t = (row as f64 + 0.5) / res.height as f64;
        for col in 0..res.width {
            let (lon, _) = pixel_lon_lat(row, col, res);
            let ripple = 0.05 * (lon + phase).sin();
            let idx = row * res.width + col;
            for ch in 0..3 {
                let base = match covered[idx] {
                    Some(k) => caps[k].color[ch],
                    None => top[ch] + (bottom[ch] - top[ch]) * t + ripple,
                };
                let noise = if spec.noise > 0.0 {
                    rng.random_range(-spec.noise..=spec.noise)
                } else {
                    0.0
                };
                pixels.set(ch, row, col, (base + noise).clamp(0.0, 1.0));
            }
        }
    }
    let mask_data = covered.iter().map(|c| u8::from(c.is_some())).collect();
    let mask = BinaryMask::new(res.height, res.width, mask_data)?;
    let image = EquirectImage::new(pixels, Provenance::Synthetic(seed))?;
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn north_pole_cap_is_a_full_width_band() {
        let res = Resolution::new(128, 64);
        for &r in &[20.0, 33.0, 47.5] {
            let mask = render_caps(&[Cap::new(0.0, 90.0, r)], res);
            for row in 0..res.height {
                let (_, lat) = pixel_lon_lat(row, 0, res);
                let expect = lat.to_degrees() > 90.0 - r;
                for col in 0..res.width {
                    assert_eq!(mask.get(row, col), expect, "r={r} row={row} col={col}");
                }
            }
        }
    }

    #[test]
    fn equatorial_cap_area_matches_solid_angle() {
        let res = Resolution::CANONICAL;
        let mask = render_caps(&[Cap::new(30.0, 0.0, 10.0)], res);
        let dlat = PI / res.height as f64;
        let dlon = 2.0 * PI / res.width as f64;
        let mut area = 0.0;
        for row in 0..res.height {
            let (_, lat) = pixel_lon_lat(row, 0, res);
            for col in 0..res.width {
                if mask.get(row, col) {
                    area += lat.cos() * dlat * dlon;
                }
            }
        }
        let fraction = area / (4.0 * PI);
        let expect = (1.0 - 10f64.to_radians().cos()) / 2.0;
        assert!((fraction - expect).abs() / expect < 0.02, "{fraction} vs {expect}");
    }

    #[test]
    fn polar_caps_stretch_horizontally() {
        let res = Resolution::new(256, 128);
        let equator = render_caps(&[Cap::new(0.0, 0.0, 10.0)], res);
        let polar = render_caps(&[Cap::new(0.0, 70.0, 10.0)], res);
        let widest = |m: &BinaryMask| {
            (0..res.height)
                .map(|r| (0..res.width).filter(|&c| m.get(r, c)).count())
                .max()
                .unwrap()
        };
        assert!(widest(&polar) > 2 * widest(&equator));
    }

    #[test]
    fn scenes_are_deterministic_and_non_empty() {
        let spec = SceneSpec::default().with_resolution(Resolution::new(64, 32));
        for seed in 0..10 {
            let a = synth_scene(seed, &spec).unwrap();
            let b = synth_scene(seed, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.1.has_foreground());
            assert_eq!(a.0.provenance(), &Provenance::Synthetic(seed));
        }
        assert_ne!(synth_scene(1, &spec).unwrap().1, synth_scene(2, &spec).unwrap().1);
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let base = SceneSpec::default();
        let zero_caps = SceneSpec { caps: (0, 0), ..base.clone() };
        assert!(matches!(synth_scene(0, &zero_caps), Err(DdsError::DegenerateSpec(_))));
        let zero_radius = SceneSpec { radius_deg: (0.0, 0.0), ..base.clone() };
        assert!(matches!(synth_scene(0, &zero_radius), Err(DdsError::DegenerateSpec(_))));
        let sub_pixel = SceneSpec {
            resolution: Resolution::new(16, 8),
            radius_deg: (5.0, 6.0),
            ..base
        };
        assert!(matches!(synth_scene(0, &sub_pixel), Err(DdsError::DegenerateSpec(_))));
    }
}
