//! Sidecar backend: detections and meshes computed elsewhere (for example by
//! an external face-mesh tool) and stored as JSON keyed by frame id.
//!
//! ```json
//! { "frames": { "vid_f000000": { "faces": [{"x0":1,"y0":2,"x1":50,"y1":60,"score":0.9}],
//!                                 "landmarks": [[x, y, z], ...] } } }
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::backend::{FaceDetector, FrameInput, LandmarkProvider};
use super::geometry::FaceBox;
use crate::error::Result;
use crate::util;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedFrame {
    #[serde(default)]
    pub faces: Vec<FaceBox>,
    #[serde(default)]
    pub landmarks: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedFile {
    pub frames: BTreeMap<String, PrecomputedFrame>,
}

#[derive(Debug, Clone)]
pub struct Precomputed {
    data: Arc<PrecomputedFile>,
}

impl Precomputed {
    pub fn new(data: PrecomputedFile) -> Self {
        Self { data: Arc::new(data) }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::new(util::read_json(path)?))
    }
}

impl FaceDetector for Precomputed {
    fn detect(&mut self, frame: &FrameInput<'_>) -> Result<Vec<FaceBox>> {
        Ok(self.data.frames.get(frame.frame_id).map(|f| f.faces.clone()).unwrap_or_default())
    }
}

impl LandmarkProvider for Precomputed {
    fn landmarks(&mut self, frame: &FrameInput<'_>, _face: &FaceBox) -> Result<Option<Vec<[f64; 3]>>> {
        Ok(self.data.frames.get(frame.frame_id).and_then(|f| f.landmarks.clone()))
    }
}
