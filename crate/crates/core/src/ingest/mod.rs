//! Video discovery, frame extraction and the corpus manifest.
//!
//! Frame stills land under `<out>/frames/<video_id>/<frame_id>.<ext>` and
//! every path stored in the manifest is relative to `<out>`, so a manifest
//! can be moved together with its frames.

pub mod decode;
pub mod view_mapping;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use image::codecs::jpeg::JpegEncoder;
use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use decode::{decoder_for, DecodeOutcome, DecodedFrame, Fps, VideoDecoder, VideoInfo};
pub use view_mapping::{BehaviorTag, CameraView, ViewMapping, ViewRule};

use crate::error::{Error, Result};
use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: String,
    pub video_id: String,
    /// Index in decode order of the source video.
    pub index: usize,
    /// Relative to the manifest directory.
    pub image_path: String,
    pub timestamp_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub source_path: String,
    pub camera_view: CameraView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_tag: Option<BehaviorTag>,
    /// Number of frame records emitted for this video.
    pub frame_count: usize,
    /// Frames decoded from the source, before striding.
    pub source_frame_count: usize,
    pub stride: usize,
    pub fps: Fps,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub corpus_id: String,
    pub created_at: DateTime<Utc>,
    pub image_format: StillFormat,
    pub videos: Vec<VideoEntry>,
    pub total_frames: usize,
    /// Directory the manifest was loaded from; frame paths resolve against it.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Encoding for extracted stills.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum StillFormat {
    #[default]
    Png,
    Jpeg {
        quality: u8,
    },
}

impl StillFormat {
    pub fn extension(self) -> &'static str {
        match self {
            StillFormat::Png => "png",
            StillFormat::Jpeg { .. } => "jpg",
        }
    }

    pub fn save(self, image: &RgbImage, path: &Path) -> Result<()> {
        match self {
            StillFormat::Png => {
                image.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::image(path, e))
            }
            StillFormat::Jpeg { quality } => {
                let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
                let mut writer = std::io::BufWriter::new(file);
                JpegEncoder::new_with_quality(&mut writer, quality)
                    .encode_image(image)
                    .map_err(|e| Error::image(path, e))
            }
        }
    }
}

pub fn frame_id(video_id: &str, index: usize) -> String {
    format!("{video_id}_f{index:06}")
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut manifest: CorpusManifest = util::read_json(path)?;
        manifest.root = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn frames(&self) -> impl Iterator<Item = (&VideoEntry, &FrameRecord)> {
        self.videos.iter().flat_map(|v| v.frames.iter().map(move |f| (v, f)))
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for video in &self.videos {
            if !ids.insert(&video.video_id) {
                return Err(Error::DuplicateVideoId(video.video_id.clone()));
            }
        }
        let sum: usize = self.videos.iter().map(|v| v.frame_count).sum();
        if sum != self.total_frames {
            return Err(Error::InvalidInput(format!(
                "manifest total_frames {} != sum of video frame counts {sum}",
                self.total_frames
            )));
        }
        Ok(())
    }
}

/// Derive a filesystem- and id-safe video id from a file stem.
pub fn video_id_for(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn discover_videos(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if decode::is_video_path(&path) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

fn relative_slash(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Deterministic manifest timestamp: `SOURCE_DATE_EPOCH` when set, else the
/// newest source modification time, else the Unix epoch.
fn manifest_timestamp(sources: &[PathBuf]) -> DateTime<Utc> {
    if let Some(secs) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse::<i64>().ok()) {
        if let Some(ts) = Utc.timestamp_opt(secs, 0).single() {
            return ts;
        }
    }
    sources
        .iter()
        .filter_map(|p| fs::metadata(p).and_then(|m| m.modified()).ok())
        .max()
        .map(|t| {
            let dt: DateTime<Utc> = t.into();
            Utc.timestamp_opt(dt.timestamp(), 0).single().unwrap_or(dt)
        })
        .unwrap_or_else(|| Utc.timestamp_opt(0, 0).unwrap())
}

/// Discover videos under `root_dir` and probe each one. Frames are not
/// extracted here; `frame_count` holds the probed source frame count.
pub fn build_corpus_manifest(root_dir: &Path, view_mapping: &ViewMapping) -> Result<CorpusManifest> {
    let mapping = view_mapping.compile()?;
    let paths = discover_videos(root_dir)?;
    if paths.is_empty() {
        log::warn!("no videos found under {}; manifest is empty", root_dir.display());
    }

    let mut seen = BTreeSet::new();
    for path in &paths {
        let id = video_id_for(path);
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateVideoId(id));
        }
    }

    let videos = paths
        .par_iter()
        .map(|path| {
            let info = decoder_for(path).probe(path)?;
            let rel = relative_slash(root_dir, path);
            let (camera_view, behavior_tag) = mapping.classify(&rel);
            Ok(VideoEntry {
                video_id: video_id_for(path),
                source_path: path.to_string_lossy().into_owned(),
                camera_view,
                behavior_tag,
                frame_count: info.frame_count,
                source_frame_count: info.frame_count,
                stride: 1,
                fps: info.fps,
                width: info.width,
                height: info.height,
                frames: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let total_frames = videos.iter().map(|v| v.frame_count).sum();
    let corpus_id = root_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "corpus".into());
    Ok(CorpusManifest {
        corpus_id,
        created_at: manifest_timestamp(&paths),
        image_format: StillFormat::Png,
        videos,
        total_frames,
        root: PathBuf::new(),
    })
}

/// Decode `video` and write every `stride`-th frame under `out_dir`.
///
/// Updates the entry's counts and frame list. Returned image paths are
/// relative to `out_dir`.
pub fn extract_frames(
    video: &mut VideoEntry,
    out_dir: &Path,
    stride: usize,
    format: StillFormat,
) -> Result<Vec<FrameRecord>> {
    if stride == 0 {
        return Err(Error::InvalidInput("stride must be >= 1".into()));
    }
    let source = PathBuf::from(&video.source_path);
    let frames_rel = format!("frames/{}", video.video_id);
    let frames_dir = out_dir.join(&frames_rel);
    util::create_dir_all(&frames_dir)?;

    let mut records = Vec::new();
    let mut dims = None;
    let outcome = decoder_for(&source).decode(&source, &mut |frame: DecodedFrame| {
        dims.get_or_insert((frame.image.width(), frame.image.height()));
        if !frame.index.is_multiple_of(stride) {
            return Ok(());
        }
        let id = frame_id(&video.video_id, frame.index);
        let file_name = format!("{id}.{}", format.extension());
        format.save(&frame.image, &frames_dir.join(&file_name))?;
        records.push(FrameRecord {
            frame_id: id,
            video_id: video.video_id.clone(),
            index: frame.index,
            image_path: format!("{frames_rel}/{file_name}"),
            timestamp_ms: frame.timestamp_ms,
        });
        Ok(())
    })?;

    if outcome.frames_decoded == 0 {
        log::warn!("{}: video has no frames", source.display());
    }
    if let Some((w, h)) = dims {
        video.width = w;
        video.height = h;
    }
    video.source_frame_count = outcome.frames_decoded;
    video.stride = stride;
    video.frame_count = records.len();
    video.frames = records.clone();
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub stride: usize,
    pub format: StillFormat,
    pub view_mapping: ViewMapping,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { stride: 1, format: StillFormat::Png, view_mapping: ViewMapping::default() }
    }
}

/// Full ingest: discover, extract every video in parallel, then write
/// `<out_dir>/manifest.json` from a single thread.
pub fn ingest(root_dir: &Path, out_dir: &Path, opts: &IngestOptions) -> Result<CorpusManifest> {
    let mut manifest = build_corpus_manifest(root_dir, &opts.view_mapping)?;
    util::create_dir_all(out_dir)?;
    manifest
        .videos
        .par_iter_mut()
        .try_for_each(|video| extract_frames(video, out_dir, opts.stride, opts.format).map(|_| ()))?;
    manifest.image_format = opts.format;
    manifest.total_frames = manifest.videos.iter().map(|v| v.frame_count).sum();
    manifest.root = out_dir.to_path_buf();
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
