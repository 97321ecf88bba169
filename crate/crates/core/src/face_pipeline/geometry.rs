//! Box geometry: IoU, greedy NMS, primary-face choice and the expanded
//! mouth box.

use serde::{Deserialize, Serialize};

use super::lips::LipIndices;
use crate::error::{Error, Result};

pub const MESH_POINTS: usize = 468;
pub const DEFAULT_MOUTH_MARGIN_PX: u32 = 10;

/// Scored face box in pixel coordinates, `x0 < x1`, `y0 < y1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: f64,
}

impl FaceBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> Self {
        Self { x0, y0, x1, y1, score }
    }

    pub fn width(&self) -> f64 {
        (self.x1 - self.x0).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y1 - self.y0).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1, self.score].iter().all(|v| v.is_finite())
            && self.x0 < self.x1
            && self.y0 < self.y1
            && (0.0..=1.0).contains(&self.score)
    }

    /// Intersect with the frame rectangle; `None` when nothing is left.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<FaceBox> {
        let b = FaceBox {
            x0: self.x0.clamp(0.0, width as f64),
            y0: self.y0.clamp(0.0, height as f64),
            x1: self.x1.clamp(0.0, width as f64),
            y1: self.y1.clamp(0.0, height as f64),
            score: self.score,
        };
        b.is_valid().then_some(b)
    }

    /// Grow each side by `fraction` of the box size.
    pub fn dilate(&self, fraction: f64) -> FaceBox {
        let dx = self.width() * fraction;
        let dy = self.height() * fraction;
        FaceBox { x0: self.x0 - dx, y0: self.y0 - dy, x1: self.x1 + dx, y1: self.y1 + dy, score: self.score }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

pub fn iou(a: &FaceBox, b: &FaceBox) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited by descending score (ties: lower input index first);
/// a box survives unless it overlaps an earlier survivor with
/// IoU >= `iou_threshold`. Survivors come back in visiting order.
pub fn nms(boxes: &[FaceBox], iou_threshold: f64) -> Vec<FaceBox> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].score.total_cmp(&boxes[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k], &boxes[i]) < iou_threshold) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| boxes[i]).collect()
}

/// Largest box; equal areas fall back to the higher score, then to the
/// geometrically smaller coordinates so the result is order independent.
pub fn select_primary_face(boxes: &[FaceBox]) -> Option<FaceBox> {
    boxes.iter().copied().max_by(|a, b| {
        a.area()
            .total_cmp(&b.area())
            .then(a.score.total_cmp(&b.score))
            .then(b.y0.total_cmp(&a.y0))
            .then(b.x0.total_cmp(&a.x0))
    })
}

/// 468-point face mesh in frame pixels (`z` is unitless relative depth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 3]>,
    pub face_box: FaceBox,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 3]>, face_box: FaceBox) -> Result<Self> {
        if points.len() != MESH_POINTS {
            return Err(Error::InvalidInput(format!("face mesh must have {MESH_POINTS} points, got {}", points.len())));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidInput("non-finite landmark coordinate".into()));
        }
        Ok(Self { points, face_box })
    }
}

/// Integer mouth box. Pixels `x0..x1` by `y0..y1` (half-open) are the crop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MouthBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub margin_px: u32,
}

impl MouthBox {
    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64 && x <= self.x1 as f64 && y >= self.y0 as f64 && y <= self.y1 as f64
    }
}

/// Lip extrema `[min_x, min_y, max_x, max_y]` over the lip subset.
pub fn lip_extent(landmarks: &LandmarkSet, lips: &LipIndices) -> Result<[f64; 4]> {
    let mut ext = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for &i in lips.all() {
        let p =
            landmarks.points.get(i).ok_or_else(|| Error::InvalidInput(format!("lip index {i} outside the mesh")))?;
        ext[0] = ext[0].min(p[0]);
        ext[1] = ext[1].min(p[1]);
        ext[2] = ext[2].max(p[0]);
        ext[3] = ext[3].max(p[1]);
    }
    if !ext.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput("empty lip index list".into()));
    }
    Ok(ext)
}

/// Box from lip extrema expanded by `margin_px`, before clamping.
/// `floor` on the minimum side, `ceil` on the maximum side.
pub fn mouth_bbox_unclamped(landmarks: &LandmarkSet, lips: &LipIndices, margin_px: u32) -> Result<[i64; 4]> {
    let [min_x, min_y, max_x, max_y] = lip_extent(landmarks, lips)?;
    let (w, h) = (max_x - min_x, max_y - min_y);
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::DegenerateMouth { width: w, height: h });
    }
    let m = margin_px as i64;
    Ok([min_x.floor() as i64 - m, min_y.floor() as i64 - m, max_x.ceil() as i64 + m, max_y.ceil() as i64 + m])
}

/// Expanded mouth box clamped to the frame: `x0, y0` into `[0, w-1]`,
/// `x1, y1` into `[0, w]` (resp. `h`).
pub fn mouth_bbox(
    landmarks: &LandmarkSet,
    lips: &LipIndices,
    margin_px: u32,
    frame_w: u32,
    frame_h: u32,
) -> Result<MouthBox> {
    if frame_w == 0 || frame_h == 0 {
        return Err(Error::InvalidInput("empty frame".into()));
    }
    let [x0, y0, x1, y1] = mouth_bbox_unclamped(landmarks, lips, margin_px)?;
    let (w, h) = (frame_w as i64, frame_h as i64);
    let b =
        MouthBox { x0: x0.clamp(0, w - 1), y0: y0.clamp(0, h - 1), x1: x1.clamp(0, w), y1: y1.clamp(0, h), margin_px };
    if b.x1 <= b.x0 || b.y1 <= b.y0 {
        return Err(Error::DegenerateMouth { width: (b.x1 - b.x0) as f64, height: (b.y1 - b.y0) as f64 });
    }
    Ok(b)
}
