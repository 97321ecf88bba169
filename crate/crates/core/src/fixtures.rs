//! Synthetic faces, mouth crops and videos with known ground truth.
//!
//! The renderer draws a flat-shaded face (skin ellipse, two eyes, red lips
//! and a dark mouth opening) on a noisy gray background. The bundled
//! `synthetic` detector and mesh backends understand exactly this palette,
//! which lets the whole pipeline run end to end without external models.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, DynamicImage, Frame, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::{Annotation, Status};
use crate::error::{Error, Result};
use crate::face_pipeline::{FaceBox, MouthBox};
use crate::label::{Label, MouthState};
use crate::mouth_net::LabeledImage;
use crate::util;

pub const BACKGROUND: [u8; 3] = [105, 105, 105];
pub const SKIN: [u8; 3] = [215, 170, 140];
pub const LIP: [u8; 3] = [170, 60, 70];
pub const MOUTH_INTERIOR: [u8; 3] = [25, 10, 15];
pub const EYE: [u8; 3] = [45, 35, 35];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceScene {
    pub width: u32,
    pub height: u32,
    pub center: (f64, f64),
    pub radii: (f64, f64),
    pub mouth_open: bool,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    /// Tight box around every face pixel (half-open).
    pub face_box: FaceBox,
    /// `[min_x, min_y, max_x, max_y]` over lip and mouth-opening pixels.
    pub lip_extent: [f64; 4],
    pub mouth_open: bool,
}

impl SceneTruth {
    pub fn label(&self) -> Label {
        if self.mouth_open {
            Label::Yawn
        } else {
            Label::NoYawn
        }
    }
}

fn inside(x: f64, y: f64, c: (f64, f64), r: (f64, f64)) -> bool {
    let dx = (x - c.0) / r.0;
    let dy = (y - c.1) / r.1;
    dx * dx + dy * dy <= 1.0
}

/// Brightness-only noise keeps the palette small enough for lossless GIF.
fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amp: i32) -> Rgb<u8> {
    let d = rng.random_range(-amp..=amp);
    Rgb(base.map(|v| (v as i32 + d).clamp(0, 255) as u8))
}

pub fn render_scene(scene: &FaceScene) -> (RgbImage, SceneTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.noise_seed);
    let (cx, cy) = scene.center;
    let (rx, ry) = scene.radii;
    let mouth_c = (cx, cy + 0.5 * ry);
    let lips_r = (0.34 * rx, if scene.mouth_open { 0.24 * ry } else { 0.12 * ry });
    let hole_r = if scene.mouth_open { (0.24 * rx, 0.16 * ry) } else { (0.28 * rx, 0.025 * ry + 0.75) };
    let eye_r = (0.13 * rx, 0.07 * ry);
    let eyes = [(cx - 0.38 * rx, cy - 0.2 * ry), (cx + 0.38 * rx, cy - 0.2 * ry)];

    let mut face = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut lips = face;
    let grow = |b: &mut [f64; 4], x: f64, y: f64| {
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x);
        b[3] = b[3].max(y);
    };

    let image = RgbImage::from_fn(scene.width, scene.height, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        if !inside(fx, fy, (cx, cy), (rx, ry)) {
            return jitter(&mut rng, BACKGROUND, 6);
        }
        grow(&mut face, fx, fy);
        if inside(fx, fy, mouth_c, hole_r) {
            grow(&mut lips, fx, fy);
            jitter(&mut rng, MOUTH_INTERIOR, 3)
        } else if inside(fx, fy, mouth_c, lips_r) {
            grow(&mut lips, fx, fy);
            jitter(&mut rng, LIP, 3)
        } else if eyes.iter().any(|&e| inside(fx, fy, e, eye_r)) {
            jitter(&mut rng, EYE, 3)
        } else {
            jitter(&mut rng, SKIN, 3)
        }
    });
    let truth = SceneTruth {
        face_box: FaceBox::new(face[0], face[1], face[2] + 1.0, face[3] + 1.0, 1.0),
        lip_extent: lips,
        mouth_open: scene.mouth_open,
    };
    (image, truth)
}

/// A random scene with the face fully inside the frame.
pub fn random_scene(width: u32, height: u32, mouth_open: bool, rng: &mut impl Rng) -> FaceScene {
    let short = width.min(height) as f64;
    let ry = rng.random_range(0.28..0.40) * short;
    let rx = ry * rng.random_range(0.72..0.85);
    let cx = rng.random_range(rx + 2.0..width as f64 - rx - 2.0);
    let cy = rng.random_range(ry + 2.0..height as f64 - ry - 2.0);
    FaceScene { width, height, center: (cx, cy), radii: (rx, ry), mouth_open, noise_seed: rng.random() }
}

/// Crop the truth lip extent expanded by `margin` pixels.
pub fn crop_mouth(image: &RgbImage, truth: &SceneTruth, margin: i64) -> RgbImage {
    let [x0, y0, x1, y1] = truth.lip_extent;
    let (w, h) = (image.width() as i64, image.height() as i64);
    let x0 = (x0.floor() as i64 - margin).clamp(0, w - 1);
    let y0 = (y0.floor() as i64 - margin).clamp(0, h - 1);
    let x1 = (x1.ceil() as i64 + 1 + margin).clamp(x0 + 1, w);
    let y1 = (y1.ceil() as i64 + 1 + margin).clamp(y0 + 1, h);
    image::imageops::crop_imm(image, x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32).to_image()
}

/// Stand-alone mouth crop: a dark elliptical blob on a flat lip/skin
/// texture for `open`, the flat texture alone otherwise. Every fifth crop
/// is grayscale (replicated to RGB), sizes vary.
pub fn render_mouth_crop(open: bool, rng: &mut impl Rng) -> RgbImage {
    let w = rng.random_range(40..=96u32);
    let h = ((w as f64) * rng.random_range(0.6..0.9)).round() as u32;
    let brightness = rng.random_range(0.9..1.1);
    let base = [190.0 * brightness, 120.0 * brightness, 110.0 * brightness];
    let (ax, ay) = (rng.random_range(0.30..0.42) * w as f64, rng.random_range(0.30..0.42) * h as f64);
    let c = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let dark = rng.random_range(20.0..45.0);
    let gray = rng.random_range(0..5) == 0;
    RgbImage::from_fn(w, h, |x, y| {
        let noise = rng.random_range(-10.0..10.0);
        let px = if open && inside(x as f64, y as f64, c, (ax, ay)) {
            [dark + noise * 0.3; 3]
        } else {
            base.map(|v| v + noise)
        };
        let px = px.map(|v: f64| v.clamp(0.0, 255.0));
        if gray {
            let l = (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]).round() as u8;
            Rgb([l, l, l])
        } else {
            Rgb(px.map(|v| v.round() as u8))
        }
    })
}

/// Balanced two-class set of stand-alone mouth crops.
pub fn mouth_crop_dataset(n: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let open = i % 2 == 0;
            LabeledImage {
                image: render_mouth_crop(open, &mut rng),
                label: if open { MouthState::Yawn } else { MouthState::NoYawn },
                source: format!("synthetic_{i:05}"),
            }
        })
        .collect()
}

/// Mouth crops cut from rendered face scenes, matching what the annotation
/// pipeline feeds the classifier.
pub fn face_crop_dataset(n: usize, seed: u64, margin: i64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let open = i % 2 == 0;
            let scene = random_scene(160, 120, open, &mut rng);
            let (img, truth) = render_scene(&scene);
            LabeledImage {
                image: crop_mouth(&img, &truth, margin),
                label: if open { MouthState::Yawn } else { MouthState::NoYawn },
                source: format!("face_crop_{i:05}"),
            }
        })
        .collect()
}

/// Write as `<dir>/yawn/*.png` and `<dir>/no_yawn/*.png`.
pub fn write_dataset(dir: &Path, data: &[LabeledImage]) -> Result<()> {
    for item in data {
        let class_dir = dir.join(item.label.as_str());
        util::create_dir_all(&class_dir)?;
        let name = Path::new(&item.source)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| item.source.clone());
        let path = class_dir.join(format!("{name}.png"));
        item.image.save(&path).map_err(|e| Error::image(&path, e))?;
    }
    Ok(())
}

pub fn write_gif(path: &Path, frames: &[RgbImage], delay_ms: u32) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = GifEncoder::new_with_speed(BufWriter::new(file), 10);
    encoder.set_repeat(Repeat::Infinite).map_err(|e| Error::image(path, e))?;
    for frame in frames {
        let rgba = DynamicImage::ImageRgb8(frame.clone()).to_rgba8();
        encoder
            .encode_frame(Frame::from_parts(rgba, 0, 0, Delay::from_numer_denom_ms(delay_ms, 1)))
            .map_err(|e| Error::image(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTruth {
    pub video_id: String,
    pub labels: Vec<Label>,
    pub scenes: Vec<SceneTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
    pub videos: BTreeMap<String, VideoTruth>,
}

impl CorpusTruth {
    pub fn label_of(&self, video_id: &str, index: usize) -> Option<Label> {
        self.videos.get(video_id)?.labels.get(index).copied()
    }

    pub fn count(&self, label: Label) -> usize {
        self.videos.values().flat_map(|v| &v.labels).filter(|&&l| l == label).count()
    }
}

/// Render one GIF per `(video_id, mouth-open pattern)` into `dir` at 10 fps.
/// The face drifts a little from frame to frame.
pub fn write_fixture_corpus(dir: &Path, videos: &[(&str, &[bool])], seed: u64) -> Result<CorpusTruth> {
    const W: u32 = 160;
    const H: u32 = 120;
    util::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = CorpusTruth { width: W, height: H, fps: 10, videos: BTreeMap::new() };
    for (video_id, pattern) in videos {
        let base = random_scene(W, H, false, &mut rng);
        let mut frames = Vec::new();
        let mut scenes = Vec::new();
        for (i, &open) in pattern.iter().enumerate() {
            let drift = (i as f64 * 0.7).sin() * 2.0;
            let scene = FaceScene {
                center: (base.center.0 + drift, base.center.1 + drift * 0.5),
                mouth_open: open,
                noise_seed: rng.random(),
                ..base.clone()
            };
            let (img, t) = render_scene(&scene);
            frames.push(img);
            scenes.push(t);
        }
        write_gif(&dir.join(format!("{video_id}.gif")), &frames, 100)?;
        truth.videos.insert(
            video_id.to_string(),
            VideoTruth {
                video_id: video_id.to_string(),
                labels: scenes.iter().map(SceneTruth::label).collect(),
                scenes,
            },
        );
    }
    Ok(truth)
}

/// The standard two-video, 20-frame fixture corpus.
pub const STANDARD_PATTERNS: [(&str, &[bool]); 2] = [
    ("driver_a", &[false, false, true, true, true, false, false, false, true, false]),
    ("driver_b", &[false, true, true, false, false, false, true, true, true, false]),
];

pub fn write_standard_corpus(dir: &Path) -> Result<CorpusTruth> {
    write_fixture_corpus(dir, &STANDARD_PATTERNS, 7)
}

/// Unreviewed annotation on a 64x48 frame with a centered mouth box
/// (none for `no_face`). Handy for store and export tests.
pub fn stub_annotation(video_id: &str, index: usize, label: Label, confidence: f64) -> Annotation {
    Annotation {
        frame_id: crate::ingest::frame_id(video_id, index),
        video_id: video_id.to_string(),
        frame_index: index,
        image_path: String::new(),
        frame_width: 64,
        frame_height: 48,
        label,
        confidence: if label == Label::NoFace { 0.0 } else { confidence },
        status: Status::Auto,
        auto_label: label,
        reviewer: None,
        reviewed_at: None,
        mouth_box: (label != Label::NoFace).then_some(MouthBox { x0: 20, y0: 26, x1: 44, y1: 40, margin_px: 10 }),
        crop_path: None,
        note: None,
    }
}
