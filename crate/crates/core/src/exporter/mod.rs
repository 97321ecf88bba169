//! Training-ready datasets and corpus statistics from an annotation store.

mod detection;
mod stats;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use detection::{denormalize, format_label_line, parse_label_line};
pub use stats::{
    class_balance, plot_timeline, timeline_report, ClassBalance, LabelCounts, TimelineEntry, TimelineReport,
    VideoBalance,
};

use crate::annotator::{Annotation, AnnotationStore, Status};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::util;

pub const EXPORT_MANIFEST_FILE: &str = "export_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    ClassificationFolders,
    DetectionLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Include {
    #[default]
    VerifiedOnly,
    All,
}

impl std::str::FromStr for Include {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "verified_only" | "verified" => Ok(Include::VerifiedOnly),
            "all" => Ok(Include::All),
            other => Err(Error::InvalidInput(format!("unknown include set `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMapEntry {
    pub label: Label,
    pub index: usize,
}

/// Fixed class order shared by both layouts.
pub fn class_map() -> Vec<ClassMapEntry> {
    [Label::Yawn, Label::NoYawn]
        .into_iter()
        .map(|label| ClassMapEntry { label, index: label.class_index().expect("two-class label") })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train_fraction: f64,
    pub seed: u64,
    pub train_videos: Vec<String>,
    pub val_videos: Vec<String>,
    pub train_images: usize,
    pub val_images: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFrame {
    pub frame_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub export_id: String,
    pub layout: Layout,
    pub include: Include,
    pub class_map: Vec<ClassMapEntry>,
    /// Exported images per class (`yawn`, `no_yawn`).
    pub counts: BTreeMap<Label, usize>,
    /// `no_face` frames in the include set, never exported.
    pub excluded_no_face: usize,
    pub skipped: usize,
    pub source_store_hash: String,
    /// Time of the newest store event, so unchanged stores re-export identically.
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSummary>,
}

fn selection(store: &AnnotationStore, include: Include) -> Result<Vec<&Annotation>> {
    let state = store.state();
    if state.annotations.is_empty() {
        return Err(Error::Export("store has no annotations".into()));
    }
    if include == Include::VerifiedOnly && state.verified_count() == 0 {
        return Err(Error::NothingVerified);
    }
    Ok(state.annotations.values().filter(|a| include == Include::All || a.status == Status::Verified).collect())
}

/// Make `out` ready for a fresh export. Only directories that are empty or
/// hold a previous export are touched.
fn prepare_out_dir(out: &Path, owned: &[&str]) -> Result<()> {
    if out.exists() {
        let has_entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if has_entries && !out.join(EXPORT_MANIFEST_FILE).exists() {
            return Err(Error::Export(format!(
                "{} is not empty and holds no previous export; refusing to write into it",
                out.display()
            )));
        }
        for name in owned {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            } else if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    util::create_dir_all(out)
}

fn image_ext(a: &Annotation) -> String {
    Path::new(&a.image_path).extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_else(|| "png".into())
}

fn copy_image(a: &Annotation, dest: &Path) -> Result<()> {
    fs::copy(&a.image_path, dest).map_err(|e| Error::io(PathBuf::from(&a.image_path), e))?;
    Ok(())
}

fn export_id(layout: Layout, store_hash: &str, extra: &str) -> String {
    let key = format!("{layout:?}|{store_hash}|{extra}");
    format!("x-{}", &util::sha256_hex(key.as_bytes())[..16])
}

/// `out/yawn/*` and `out/no_yawn/*` copies of the frame images.
pub fn export_classification(store: &AnnotationStore, out: &Path, include: Include) -> Result<ExportManifest> {
    let selected = selection(store, include)?;
    let labeled: Vec<&Annotation> = selected.iter().copied().filter(|a| a.label != Label::NoFace).collect();
    if labeled.is_empty() {
        return Err(Error::Export("nothing to export: every selected frame is no_face".into()));
    }
    prepare_out_dir(out, &["yawn", "no_yawn", EXPORT_MANIFEST_FILE])?;
    let mut counts: BTreeMap<Label, usize> = [(Label::Yawn, 0), (Label::NoYawn, 0)].into();
    for a in &labeled {
        let dir = out.join(a.label.as_str());
        util::create_dir_all(&dir)?;
        copy_image(a, &dir.join(format!("{}.{}", a.frame_id, image_ext(a))))?;
        *counts.entry(a.label).or_default() += 1;
    }
    let hash = store.hash();
    let manifest = ExportManifest {
        export_id: export_id(Layout::ClassificationFolders, &hash, &format!("{include:?}")),
        layout: Layout::ClassificationFolders,
        include,
        class_map: class_map(),
        counts,
        excluded_no_face: selected.len() - labeled.len(),
        skipped: 0,
        source_store_hash: hash,
        created_at: store.last_event_ts(),
        split: None,
    };
    util::write_json(&out.join(EXPORT_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionOptions {
    pub include: Include,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for DetectionOptions {
    fn default() -> Self {
        Self { include: Include::VerifiedOnly, train_fraction: 0.8, seed: 0 }
    }
}

/// Seeded video-level split; at least one video on each side when there
/// are two or more.
pub fn split_videos(videos: &[String], train_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut v = videos.to_vec();
    v.sort();
    v.dedup();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = v.len();
    let n_train = if n < 2 { n } else { ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1) };
    let val = v.split_off(n_train);
    let (mut train, mut val) = (v, val);
    train.sort();
    val.sort();
    (train, val)
}

/// `images/`, `labels/` (one line per image), `train.txt`, `val.txt`,
/// `data.yaml` and a `skipped.json` report.
pub fn export_detection(store: &AnnotationStore, out: &Path, opts: &DetectionOptions) -> Result<ExportManifest> {
    if !(opts.train_fraction > 0.0 && opts.train_fraction <= 1.0) {
        return Err(Error::Config(format!("train_fraction must lie in (0, 1], got {}", opts.train_fraction)));
    }
    let selected = selection(store, opts.include)?;
    let mut skipped = Vec::new();
    let mut usable = Vec::new();
    let mut excluded_no_face = 0;
    for a in selected {
        match (a.label.class_index(), &a.mouth_box) {
            (None, _) => excluded_no_face += 1,
            (Some(_), None) => skipped
                .push(SkippedFrame { frame_id: a.frame_id.clone(), reason: "labeled frame has no mouth box".into() }),
            (Some(class), Some(mb)) => usable.push((a, class, *mb)),
        }
    }
    if usable.is_empty() {
        return Err(Error::Export("nothing to export: no labeled frame has a mouth box".into()));
    }
    prepare_out_dir(
        out,
        &["images", "labels", "train.txt", "val.txt", "data.yaml", "skipped.json", EXPORT_MANIFEST_FILE],
    )?;
    let images = out.join("images");
    let labels = out.join("labels");
    util::create_dir_all(&images)?;
    util::create_dir_all(&labels)?;

    let videos: Vec<String> = usable.iter().map(|(a, _, _)| a.video_id.clone()).collect();
    let (train_videos, val_videos) = split_videos(&videos, opts.train_fraction, opts.seed);
    let mut train_list = String::new();
    let mut val_list = String::new();
    let mut counts: BTreeMap<Label, usize> = [(Label::Yawn, 0), (Label::NoYawn, 0)].into();
    for (a, class, mb) in &usable {
        let file = format!("{}.{}", a.frame_id, image_ext(a));
        copy_image(a, &images.join(&file))?;
        let line = format_label_line(*class, mb, a.frame_width, a.frame_height);
        util::write_atomic(&labels.join(format!("{}.txt", a.frame_id)), format!("{line}\n").as_bytes())?;
        let list = if val_videos.contains(&a.video_id) { &mut val_list } else { &mut train_list };
        list.push_str(&format!("images/{file}\n"));
        *counts.entry(a.label).or_default() += 1;
    }
    util::write_atomic(&out.join("train.txt"), train_list.as_bytes())?;
    util::write_atomic(&out.join("val.txt"), val_list.as_bytes())?;
    let names: Vec<&str> = class_map().iter().map(|c| c.label.as_str()).collect();
    let yaml = format!("path: .\ntrain: train.txt\nval: val.txt\nnc: {}\nnames: [{}]\n", names.len(), names.join(", "));
    util::write_atomic(&out.join("data.yaml"), yaml.as_bytes())?;
    util::write_json(&out.join("skipped.json"), &skipped)?;

    let hash = store.hash();
    let manifest = ExportManifest {
        export_id: export_id(
            Layout::DetectionLabels,
            &hash,
            &format!("{:?}|{}|{}", opts.include, opts.train_fraction, opts.seed),
        ),
        layout: Layout::DetectionLabels,
        include: opts.include,
        class_map: class_map(),
        counts,
        excluded_no_face,
        skipped: skipped.len(),
        source_store_hash: hash,
        created_at: store.last_event_ts(),
        split: Some(SplitSummary {
            train_fraction: opts.train_fraction,
            seed: opts.seed,
            train_images: train_list.lines().count(),
            val_images: val_list.lines().count(),
            train_videos,
            val_videos,
        }),
    };
    util::write_json(&out.join(EXPORT_MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
