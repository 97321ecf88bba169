//! Label-preserving photometric and geometric jitter for training crops.

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    /// Rotation in degrees, sampled uniformly from `[lo, hi]`.
    pub rotation_deg_range: (f32, f32),
    pub scale_range: (f32, f32),
    /// Multiplicative brightness factor range.
    pub brightness_range: (f32, f32),
    /// Each training sample appears this many times: once as-is and
    /// `multiplier - 1` times jittered.
    pub multiplier: usize,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self {
            rotation_deg_range: (-15.0, 15.0),
            scale_range: (0.9, 1.1),
            brightness_range: (0.75, 1.25),
            multiplier: 2,
        }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self { rotation_deg_range: (0.0, 0.0), scale_range: (1.0, 1.0), brightness_range: (1.0, 1.0), multiplier: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f32, f32)| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} range [{lo}, {hi}] is empty")))
            }
        };
        ordered("rotation", self.rotation_deg_range)?;
        ordered("scale", self.scale_range)?;
        ordered("brightness", self.brightness_range)?;
        if self.scale_range.0 <= 0.0 || self.brightness_range.0 < 0.0 {
            return Err(Error::Config("scale must be positive and brightness non-negative".into()));
        }
        if self.multiplier == 0 {
            return Err(Error::Config("augmentation multiplier must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Jitter {
        let draw = |rng: &mut dyn rand::RngCore, (lo, hi): (f32, f32)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        Jitter {
            rotation_deg: draw(rng, self.rotation_deg_range),
            scale: draw(rng, self.scale_range),
            brightness: draw(rng, self.brightness_range),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub rotation_deg: f32,
    pub scale: f32,
    pub brightness: f32,
}

/// Rotate and scale about the image centre (bilinear, edge-replicated) and
/// scale brightness. Output has the input's size.
pub fn apply_jitter(image: &RgbImage, jitter: Jitter) -> RgbImage {
    let (w, h) = image.dimensions();
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let theta = jitter.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let inv_scale = 1.0 / jitter.scale;
    let mut out = RgbImage::new(w, h);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let dx = x as f32 - cx;
        let dy = y as f32 - cy;
        // inverse map: rotate by -theta, then undo the scale
        let sx = (cos * dx + sin * dy) * inv_scale + cx;
        let sy = (-sin * dx + cos * dy) * inv_scale + cy;
        let sample = bilinear(image, sx, sy);
        *px = Rgb(sample.map(|v| (v * jitter.brightness).round().clamp(0.0, 255.0) as u8));
    }
    out
}

fn bilinear(image: &RgbImage, x: f32, y: f32) -> [f32; 3] {
    let (w, h) = image.dimensions();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let p = |xx, yy| image.get_pixel(xx, yy).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    std::array::from_fn(|i| {
        let top = a[i] as f32 * (1.0 - fx) + b[i] as f32 * fx;
        let bottom = c[i] as f32 * (1.0 - fx) + d[i] as f32 * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_jitter_is_lossless() {
        let img = RgbImage::from_fn(7, 5, |x, y| Rgb([x as u8 * 30, y as u8 * 40, 9]));
        let out = apply_jitter(&img, Jitter { rotation_deg: 0.0, scale: 1.0, brightness: 1.0 });
        assert_eq!(out, img);
    }

    #[test]
    fn brightness_scales_and_saturates() {
        let img = RgbImage::from_pixel(3, 3, Rgb([100, 200, 0]));
        let out = apply_jitter(&img, Jitter { rotation_deg: 0.0, scale: 1.0, brightness: 1.5 });
        assert_eq!(out.get_pixel(1, 1).0, [150, 255, 0]);
    }

    #[test]
    fn empty_ranges_rejected() {
        let aug = Augmentation { scale_range: (1.2, 0.8), ..Default::default() };
        assert!(aug.validate().is_err());
        let aug = Augmentation { multiplier: 0, ..Default::default() };
        assert!(aug.validate().is_err());
    }
}
