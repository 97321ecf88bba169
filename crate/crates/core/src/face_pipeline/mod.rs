//! Face localization, face mesh and the expanded mouth box.

mod backend;
mod geometry;
mod lips;
mod precomputed;
mod synthetic;

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use backend::{
    BackendRegistry, DetectorFactory, FaceDetector, FrameInput, LandmarkProvider, MeshFactory, PRECOMPUTED_PREFIX,
};
pub use geometry::{
    iou, lip_extent, mouth_bbox, mouth_bbox_unclamped, nms, select_primary_face, FaceBox, LandmarkSet, MouthBox,
    DEFAULT_MOUTH_MARGIN_PX, MESH_POINTS,
};
pub use lips::LipIndices;
pub use precomputed::{Precomputed, PrecomputedFile, PrecomputedFrame};
pub use synthetic::{SkinBlobDetector, TemplateMeshProvider};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
    pub backend_id: String,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { confidence_threshold: 0.5, nms_iou_threshold: 0.45, backend_id: "synthetic".into() }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("confidence_threshold", self.confidence_threshold), ("nms_iou_threshold", self.nms_iou_threshold)]
        {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.backend_id.is_empty() {
            return Err(Error::Config("backend_id is empty".into()));
        }
        Ok(())
    }
}

/// Threshold, clamp to the frame and suppress. Output is sorted by
/// descending score.
pub fn detect_with(
    detector: &mut dyn FaceDetector,
    frame: &FrameInput<'_>,
    cfg: &DetectorConfig,
) -> Result<Vec<FaceBox>> {
    cfg.validate()?;
    let (w, h) = frame.image.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput(format!("frame {} is empty", frame.frame_id)));
    }
    let raw = detector.detect(frame)?;
    let kept: Vec<FaceBox> =
        raw.iter().filter(|b| b.score >= cfg.confidence_threshold).filter_map(|b| b.clamp_to(w, h)).collect();
    Ok(nms(&kept, cfg.nms_iou_threshold))
}

/// One-shot detection through the backend registered under `cfg.backend_id`.
pub fn detect_faces(frame: &FrameInput<'_>, cfg: &DetectorConfig, registry: &BackendRegistry) -> Result<Vec<FaceBox>> {
    cfg.validate()?;
    let mut detector = registry.detector(&cfg.backend_id)?;
    detect_with(detector.as_mut(), frame, cfg)
}

/// Any provider failure or a malformed mesh yields `None`.
pub fn extract_landmarks(
    frame: &FrameInput<'_>,
    face: &FaceBox,
    provider: &mut dyn LandmarkProvider,
) -> Option<LandmarkSet> {
    match provider.landmarks(frame, face) {
        Ok(Some(points)) => match LandmarkSet::new(points, *face) {
            Ok(set) => Some(set),
            Err(e) => {
                log::debug!("{}: rejected mesh: {e}", frame.frame_id);
                None
            }
        },
        Ok(None) => None,
        Err(e) => {
            log::debug!("{}: mesh provider failed: {e}", frame.frame_id);
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoFaceReason {
    NoDetection,
    MeshFailed,
    DegenerateMouth,
}

impl NoFaceReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoFaceReason::NoDetection => "no_detection",
            NoFaceReason::MeshFailed => "mesh_failed",
            NoFaceReason::DegenerateMouth => "degenerate_mouth",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameAnalysis {
    NoFace { reason: NoFaceReason, face: Option<FaceBox> },
    Mouth { face: FaceBox, landmarks: LandmarkSet, mouth: MouthBox },
}

/// Per-worker pipeline: owns its detector and mesh instances.
pub struct FacePipeline {
    cfg: DetectorConfig,
    lips: LipIndices,
    margin_px: u32,
    detector: Box<dyn FaceDetector>,
    mesh: Box<dyn LandmarkProvider>,
}

impl FacePipeline {
    pub fn new(
        cfg: DetectorConfig,
        lips: LipIndices,
        margin_px: u32,
        detector: Box<dyn FaceDetector>,
        mesh: Box<dyn LandmarkProvider>,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, lips, margin_px, detector, mesh })
    }

    pub fn from_registry(
        registry: &BackendRegistry,
        cfg: &DetectorConfig,
        mesh_backend: &str,
        lips: LipIndices,
        margin_px: u32,
    ) -> Result<Self> {
        Self::new(cfg.clone(), lips, margin_px, registry.detector(&cfg.backend_id)?, registry.mesh(mesh_backend)?)
    }

    pub fn analyze(&mut self, frame: &FrameInput<'_>) -> Result<FrameAnalysis> {
        let faces = detect_with(self.detector.as_mut(), frame, &self.cfg)?;
        let Some(face) = select_primary_face(&faces) else {
            return Ok(FrameAnalysis::NoFace { reason: NoFaceReason::NoDetection, face: None });
        };
        let Some(landmarks) = extract_landmarks(frame, &face, self.mesh.as_mut()) else {
            return Ok(FrameAnalysis::NoFace { reason: NoFaceReason::MeshFailed, face: Some(face) });
        };
        let (w, h) = frame.image.dimensions();
        match mouth_bbox(&landmarks, &self.lips, self.margin_px, w, h) {
            Ok(mouth) => Ok(FrameAnalysis::Mouth { face, landmarks, mouth }),
            Err(Error::DegenerateMouth { .. }) => {
                Ok(FrameAnalysis::NoFace { reason: NoFaceReason::DegenerateMouth, face: Some(face) })
            }
            Err(e) => Err(e),
        }
    }
}

pub fn crop_mouth(image: &RgbImage, mouth: &MouthBox) -> RgbImage {
    image::imageops::crop_imm(image, mouth.x0 as u32, mouth.y0 as u32, mouth.width() as u32, mouth.height() as u32)
        .to_image()
}

pub fn mouth_crop_file_name(frame_id: &str, ext: &str) -> String {
    format!("{frame_id}_mouth.{ext}")
}

/// Write `<dir>/<frame_id>_mouth.png` and return its path.
pub fn write_mouth_crop(dir: &Path, frame_id: &str, crop: &RgbImage) -> Result<std::path::PathBuf> {
    crate::util::create_dir_all(dir)?;
    let path = dir.join(mouth_crop_file_name(frame_id, "png"));
    crop.save(&path).map_err(|e| Error::image(&path, e))?;
    Ok(path)
}
