//! Deterministic backends for the rendered fixture palette.
//!
//! `SkinBlobDetector` finds connected skin-colored regions and scores them
//! by how well they fill their bounding ellipse. `TemplateMeshProvider`
//! locates lip-colored pixels in the lower face, places the lip contour
//! indices on ellipses fitted to them and spreads the remaining mesh points
//! over the face ellipse.

use std::f64::consts::PI;

use image::RgbImage;

use super::backend::{FaceDetector, FrameInput, LandmarkProvider};
use super::geometry::{FaceBox, MESH_POINTS};
use super::lips::LipIndices;
use crate::error::Result;

fn is_skin(p: &image::Rgb<u8>) -> bool {
    let [r, g, b] = p.0.map(i32::from);
    r >= 150 && r - g >= 25 && r - b >= 40 && g >= 110
}

fn is_lip(p: &image::Rgb<u8>) -> bool {
    let [r, g, b] = p.0.map(i32::from);
    r >= 120 && r - g >= 60 && r - b >= 50 && g < 110
}

fn luma(p: &image::Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

#[derive(Debug, Clone)]
pub struct SkinBlobDetector {
    /// Components smaller than this fraction of the frame are ignored.
    pub min_area_fraction: f64,
}

impl Default for SkinBlobDetector {
    fn default() -> Self {
        Self { min_area_fraction: 0.002 }
    }
}

impl SkinBlobDetector {
    pub fn find(&self, image: &RgbImage) -> Vec<FaceBox> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mask: Vec<bool> = image.pixels().map(is_skin).collect();
        let mut seen = vec![false; w * h];
        let min_area = (self.min_area_fraction * (w * h) as f64).max(64.0);
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !mask[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let mut area = 0usize;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                area += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut visit = |j: usize| {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if (area as f64) < min_area {
                continue;
            }
            let bw = (x1 - x0 + 1) as f64;
            let bh = (y1 - y0 + 1) as f64;
            let score = (area as f64 / (PI / 4.0 * bw * bh)).min(1.0);
            out.push(FaceBox::new(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0, score));
        }
        out
    }
}

impl FaceDetector for SkinBlobDetector {
    fn detect(&mut self, frame: &FrameInput<'_>) -> Result<Vec<FaceBox>> {
        Ok(self.find(frame.image))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateMeshProvider {
    pub lips: LipIndices,
}

/// Points along an ellipse, starting at the left corner and running along
/// the lower half first (image y grows downward).
fn contour(center: (f64, f64), a: f64, b: f64, n: usize) -> impl Iterator<Item = [f64; 3]> {
    (0..n).map(move |k| {
        let t = PI - k as f64 * 2.0 * PI / n as f64;
        [center.0 + a * t.cos(), center.1 + b * t.sin(), 0.0]
    })
}

impl TemplateMeshProvider {
    pub fn fit(&self, image: &RgbImage, face: &FaceBox) -> Option<Vec<[f64; 3]>> {
        let (w, h) = (image.width() as f64, image.height() as f64);
        let fx0 = face.x0.max(0.0).floor() as u32;
        let fx1 = face.x1.min(w).ceil() as u32;
        let fy0 = (face.y0 + 0.45 * face.height()).max(0.0).floor() as u32;
        let fy1 = face.y1.min(h).ceil() as u32;

        let mut ext = [u32::MAX, u32::MAX, 0, 0];
        let mut count = 0;
        for y in fy0..fy1 {
            for x in fx0..fx1 {
                if is_lip(image.get_pixel(x, y)) {
                    count += 1;
                    ext = [ext[0].min(x), ext[1].min(y), ext[2].max(x), ext[3].max(y)];
                }
            }
        }
        if count < 8 || ext[2] <= ext[0] || ext[3] <= ext[1] {
            return None;
        }
        let mut inner = [u32::MAX, u32::MAX, 0, 0];
        for y in ext[1]..=ext[3] {
            for x in ext[0]..=ext[2] {
                if luma(image.get_pixel(x, y)) < 70.0 {
                    inner = [inner[0].min(x), inner[1].min(y), inner[2].max(x), inner[3].max(y)];
                }
            }
        }
        let [x0, y0, x1, y1] = ext.map(f64::from);
        let center = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
        let (a, b) = ((x1 - x0) / 2.0, (y1 - y0) / 2.0);
        let (ia, ib, ic) = if inner[0] <= inner[2] {
            let [ix0, iy0, ix1, iy1] = inner.map(f64::from);
            ((ix1 - ix0) / 2.0, (iy1 - iy0) / 2.0, ((ix0 + ix1) / 2.0, (iy0 + iy1) / 2.0))
        } else {
            (0.8 * a, 0.1 * b, center)
        };

        // face ellipse fill for the non-lip points (golden-angle spiral)
        let fc = ((face.x0 + face.x1) / 2.0, (face.y0 + face.y1) / 2.0);
        let (rx, ry) = (face.width() / 2.0 * 0.95, face.height() / 2.0 * 0.95);
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut points: Vec<[f64; 3]> = (0..MESH_POINTS)
            .map(|i| {
                let r = ((i as f64 + 0.5) / MESH_POINTS as f64).sqrt();
                let t = i as f64 * golden;
                [fc.0 + rx * r * t.cos(), fc.1 + ry * r * t.sin(), -(1.0 - r * r)]
            })
            .collect();
        for (&idx, p) in self.lips.outer().iter().zip(contour(center, a, b, self.lips.outer().len())) {
            points[idx] = p;
        }
        for (&idx, p) in self.lips.inner().iter().zip(contour(ic, ia, ib, self.lips.inner().len())) {
            points[idx] = p;
        }
        Some(points)
    }
}

impl LandmarkProvider for TemplateMeshProvider {
    fn landmarks(&mut self, frame: &FrameInput<'_>, face: &FaceBox) -> Result<Option<Vec<[f64; 3]>>> {
        Ok(self.fit(frame.image, face))
    }
}
