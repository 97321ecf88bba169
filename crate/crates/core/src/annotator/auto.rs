use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::state::{Annotation, FrameFailure, Status};
use super::store::{AnnotationStore, CROPS_DIR};
use crate::error::{Error, Result};
use crate::face_pipeline::{
    crop_mouth, mouth_crop_file_name, BackendRegistry, DetectorConfig, FacePipeline, FrameAnalysis, FrameInput,
    LipIndices, DEFAULT_MOUTH_MARGIN_PX,
};
use crate::ingest::{CorpusManifest, FrameRecord};
use crate::label::Label;
use crate::mouth_net::{ModelArtifact, Prediction};

/// Anything that turns a mouth crop into a two-class prediction.
pub trait MouthClassifier: Send + Sync {
    fn classify(&self, frame_id: &str, crop: &RgbImage) -> Result<Prediction>;
}

impl MouthClassifier for ModelArtifact {
    fn classify(&self, _frame_id: &str, crop: &RgbImage) -> Result<Prediction> {
        self.predict(crop)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateOptions {
    pub detector: DetectorConfig,
    pub mesh_backend: String,
    pub margin_px: u32,
    #[serde(skip)]
    pub lips: LipIndices,
    /// Frames processed between store commits.
    pub chunk_size: usize,
}

impl Default for AnnotateOptions {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            mesh_backend: "synthetic".into(),
            margin_px: DEFAULT_MOUTH_MARGIN_PX,
            lips: LipIndices::default(),
            chunk_size: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub total_frames: usize,
    pub annotated: usize,
    pub already_annotated: usize,
    pub no_face: usize,
    pub failed: usize,
}

enum Outcome {
    Done(Box<Annotation>),
    Failed(FrameFailure),
}

fn absolute(path: &Path) -> String {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()).to_string_lossy().into_owned()
}

fn process(
    pipeline: &mut FacePipeline,
    classifier: &dyn MouthClassifier,
    manifest: &CorpusManifest,
    frame: &FrameRecord,
    crops_dir: Option<&Path>,
) -> Outcome {
    let fail = |reason: String| {
        Outcome::Failed(FrameFailure { frame_id: frame.frame_id.clone(), video_id: frame.video_id.clone(), reason })
    };
    let path = manifest.resolve(&frame.image_path);
    let image = match image::open(&path) {
        Ok(img) => img.to_rgb8(),
        Err(e) => return fail(format!("unreadable frame {}: {e}", path.display())),
    };
    let input = FrameInput { frame_id: &frame.frame_id, image: &image };
    let analysis = match pipeline.analyze(&input) {
        Ok(a) => a,
        Err(e) => return fail(format!("face pipeline: {e}")),
    };
    let mut annotation = Annotation {
        frame_id: frame.frame_id.clone(),
        video_id: frame.video_id.clone(),
        frame_index: frame.index,
        image_path: absolute(&path),
        frame_width: image.width(),
        frame_height: image.height(),
        label: Label::NoFace,
        confidence: 0.0,
        status: Status::Auto,
        auto_label: Label::NoFace,
        reviewer: None,
        reviewed_at: None,
        mouth_box: None,
        crop_path: None,
        note: None,
    };
    match analysis {
        FrameAnalysis::NoFace { reason, .. } => {
            annotation.note = Some(reason.as_str().to_string());
        }
        FrameAnalysis::Mouth { mouth, .. } => {
            let crop = crop_mouth(&image, &mouth);
            let prediction = match classifier.classify(&frame.frame_id, &crop) {
                Ok(p) => p,
                Err(e) => return fail(format!("classifier: {e}")),
            };
            if let Some(dir) = crops_dir {
                let name = mouth_crop_file_name(&frame.frame_id, "png");
                let video_dir = dir.join(&frame.video_id);
                let out = video_dir.join(&name);
                if let Err(e) = std::fs::create_dir_all(&video_dir)
                    .map_err(|e| e.to_string())
                    .and_then(|_| crop.save(&out).map_err(|e| e.to_string()))
                {
                    return fail(format!("writing crop {}: {e}", out.display()));
                }
                annotation.crop_path = Some(format!("{CROPS_DIR}/{}/{name}", frame.video_id));
            }
            let label = Label::from(prediction.label);
            annotation.label = label;
            annotation.auto_label = label;
            annotation.confidence = prediction.confidence.clamp(0.0, 1.0);
            annotation.mouth_box = Some(mouth);
        }
    }
    Outcome::Done(Box::new(annotation))
}

/// Annotate every manifest frame that has no annotation yet. Unreadable
/// frames become failure records and the run goes on. Safe to re-run.
pub fn auto_annotate(
    store: &mut AnnotationStore,
    manifest: &CorpusManifest,
    classifier: &dyn MouthClassifier,
    registry: &BackendRegistry,
    opts: &AnnotateOptions,
) -> Result<AnnotateSummary> {
    opts.detector.validate()?;
    if opts.chunk_size == 0 {
        return Err(Error::Config("chunk_size must be positive".into()));
    }
    // fail fast on a misconfigured backend
    FacePipeline::from_registry(registry, &opts.detector, &opts.mesh_backend, opts.lips.clone(), opts.margin_px)?;

    let mut summary = AnnotateSummary { total_frames: manifest.total_frames, ..Default::default() };
    let todo: Vec<&FrameRecord> = manifest
        .frames()
        .map(|(_, f)| f)
        .filter(|f| {
            let done = store.state().annotations.contains_key(&f.frame_id);
            summary.already_annotated += done as usize;
            !done
        })
        .collect();
    let crops_dir = store.crops_dir();

    for chunk in todo.chunks(opts.chunk_size) {
        let outcomes: Vec<Outcome> = chunk
            .par_iter()
            .map_init(
                || {
                    FacePipeline::from_registry(
                        registry,
                        &opts.detector,
                        &opts.mesh_backend,
                        opts.lips.clone(),
                        opts.margin_px,
                    )
                },
                |pipeline, frame| match pipeline {
                    Ok(p) => process(p, classifier, manifest, frame, crops_dir.as_deref()),
                    Err(e) => Outcome::Failed(FrameFailure {
                        frame_id: frame.frame_id.clone(),
                        video_id: frame.video_id.clone(),
                        reason: format!("backend: {e}"),
                    }),
                },
            )
            .collect();
        let mut done = Vec::new();
        for outcome in outcomes {
            match outcome {
                Outcome::Done(a) => {
                    summary.no_face += (a.label == Label::NoFace) as usize;
                    done.push(*a);
                }
                Outcome::Failed(f) => {
                    log::warn!("{}: {}", f.frame_id, f.reason);
                    summary.failed += 1;
                    store.record_failure(f)?;
                }
            }
        }
        summary.annotated += store.add_annotations(done)?;
    }
    store.checkpoint()?;
    Ok(summary)
}
