use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::annotator::{Status, StoreState};
use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub yawn: usize,
    pub no_yawn: usize,
    pub no_face: usize,
}

impl LabelCounts {
    pub fn add(&mut self, label: Label) {
        match label {
            Label::Yawn => self.yawn += 1,
            Label::NoYawn => self.no_yawn += 1,
            Label::NoFace => self.no_face += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.yawn + self.no_yawn + self.no_face
    }

    /// `yawn / no_yawn`; `None` when there are no `no_yawn` frames.
    pub fn ratio(&self) -> Option<f64> {
        (self.no_yawn > 0).then(|| self.yawn as f64 / self.no_yawn as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoBalance {
    pub video_id: String,
    pub counts: LabelCounts,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub counts: LabelCounts,
    pub verified: usize,
    pub ratio: Option<f64>,
    pub per_video: Vec<VideoBalance>,
}

/// Counts over current labels (verified or not).
pub fn class_balance(state: &StoreState) -> ClassBalance {
    let mut total = LabelCounts::default();
    let mut per_video: BTreeMap<&str, LabelCounts> = BTreeMap::new();
    for a in state.annotations.values() {
        total.add(a.label);
        per_video.entry(&a.video_id).or_default().add(a.label);
    }
    ClassBalance {
        counts: total,
        verified: state.verified_count(),
        ratio: total.ratio(),
        per_video: per_video
            .into_iter()
            .map(|(v, c)| VideoBalance { video_id: v.to_string(), counts: c, ratio: c.ratio() })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub frame_index: usize,
    pub frame_id: String,
    pub label: Label,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineReport {
    pub video_id: String,
    pub frames: Vec<TimelineEntry>,
    pub counts: LabelCounts,
    /// Frames of this video that failed to annotate and are not in `frames`.
    pub failed: usize,
    /// Maximal runs of consecutive yawn entries, as inclusive
    /// `(first_frame_index, last_frame_index)`.
    pub episodes: Vec<(usize, usize)>,
}

pub fn timeline_report(state: &StoreState, video_id: &str) -> Result<TimelineReport> {
    let mut frames: Vec<TimelineEntry> = state
        .annotations
        .values()
        .filter(|a| a.video_id == video_id)
        .map(|a| TimelineEntry {
            frame_index: a.frame_index,
            frame_id: a.frame_id.clone(),
            label: a.label,
            status: a.status,
        })
        .collect();
    let failed = state.failures.values().filter(|f| f.video_id == video_id).count();
    if frames.is_empty() && failed == 0 {
        return Err(Error::UnknownVideo(video_id.to_string()));
    }
    frames.sort_by_key(|f| f.frame_index);
    let mut counts = LabelCounts::default();
    let mut episodes = Vec::new();
    let mut run: Option<(usize, usize)> = None;
    for f in &frames {
        counts.add(f.label);
        if f.label == Label::Yawn {
            run = Some(run.map_or((f.frame_index, f.frame_index), |(s, _)| (s, f.frame_index)));
        } else if let Some(r) = run.take() {
            episodes.push(r);
        }
    }
    episodes.extend(run);
    Ok(TimelineReport { video_id: video_id.to_string(), frames, counts, failed, episodes })
}

/// Step plot of label against frame position: yawn high, no_yawn low,
/// no_face as a gray mid-level tick.
pub fn plot_timeline(report: &TimelineReport, path: &Path) -> Result<()> {
    const H: u32 = 120;
    const PAD: u32 = 10;
    let n = report.frames.len().max(1) as u32;
    let step = (800 / n).clamp(1, 8);
    let width = n * step + 2 * PAD;
    let mut img = RgbImage::from_pixel(width, H, Rgb([255, 255, 255]));
    let axis = Rgb([160, 160, 160]);
    for x in PAD..width - PAD {
        img.put_pixel(x, H - PAD, axis);
    }
    for y in PAD..=H - PAD {
        img.put_pixel(PAD - 1, y, axis);
    }
    let level = |l: Label| match l {
        Label::Yawn => PAD + 5,
        Label::NoYawn => H - PAD - 5,
        Label::NoFace => H / 2,
    };
    let mut prev: Option<u32> = None;
    for (i, f) in report.frames.iter().enumerate() {
        let x0 = PAD + i as u32 * step;
        let y = level(f.label);
        let color = match f.label {
            Label::Yawn => Rgb([200, 40, 40]),
            Label::NoYawn => Rgb([40, 90, 200]),
            Label::NoFace => Rgb([140, 140, 140]),
        };
        if let Some(py) = prev {
            for yy in py.min(y)..=py.max(y) {
                img.put_pixel(x0, yy, Rgb([60, 60, 60]));
            }
        }
        for x in x0..x0 + step {
            img.put_pixel(x, y, color);
            img.put_pixel(x, y + 1, color);
        }
        prev = Some(y);
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        crate::util::create_dir_all(parent)?;
    }
    img.save(path).map_err(|e| Error::image(path, e))
}
