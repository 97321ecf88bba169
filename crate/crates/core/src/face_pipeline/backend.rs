//! Pluggable detector and face-mesh adapters.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;

use super::geometry::FaceBox;
use super::precomputed::Precomputed;
use super::synthetic::{SkinBlobDetector, TemplateMeshProvider};
use crate::error::{Error, Result};

/// A decoded frame together with its identity, so sidecar-driven backends
/// can look results up by id.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub frame_id: &'a str,
    pub image: &'a RgbImage,
}

/// Emits raw scored boxes; thresholding and NMS happen in `detect_faces`.
pub trait FaceDetector: Send {
    fn detect(&mut self, frame: &FrameInput<'_>) -> Result<Vec<FaceBox>>;
}

/// Produces 468 mesh points in frame pixel coordinates, or `None` when the
/// mesh does not converge.
pub trait LandmarkProvider: Send {
    fn landmarks(&mut self, frame: &FrameInput<'_>, face: &FaceBox) -> Result<Option<Vec<[f64; 3]>>>;
}

pub type DetectorFactory = Arc<dyn Fn() -> Result<Box<dyn FaceDetector>> + Send + Sync>;
pub type MeshFactory = Arc<dyn Fn() -> Result<Box<dyn LandmarkProvider>> + Send + Sync>;

pub const PRECOMPUTED_PREFIX: &str = "precomputed:";

/// Named backend factories. Each worker asks for its own instance.
///
/// Besides registered names, ids of the form `precomputed:<path>` load a
/// JSON sidecar with per-frame detections and meshes.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    detectors: BTreeMap<String, DetectorFactory>,
    meshes: BTreeMap<String, MeshFactory>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("detectors", &self.detectors.keys().collect::<Vec<_>>())
            .field("meshes", &self.meshes.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry with the built-in `synthetic` detector and mesh provider.
    pub fn with_builtin() -> Self {
        let mut r = Self::empty();
        r.register_detector("synthetic", || Ok(Box::new(SkinBlobDetector::default())));
        r.register_mesh("synthetic", || Ok(Box::new(TemplateMeshProvider::default())));
        r
    }

    pub fn register_detector<F>(&mut self, id: &str, factory: F)
    where
        F: Fn() -> Result<Box<dyn FaceDetector>> + Send + Sync + 'static,
    {
        self.detectors.insert(id.to_string(), Arc::new(factory));
    }

    pub fn register_mesh<F>(&mut self, id: &str, factory: F)
    where
        F: Fn() -> Result<Box<dyn LandmarkProvider>> + Send + Sync + 'static,
    {
        self.meshes.insert(id.to_string(), Arc::new(factory));
    }

    pub fn detector_ids(&self) -> Vec<String> {
        self.detectors.keys().cloned().collect()
    }

    pub fn mesh_ids(&self) -> Vec<String> {
        self.meshes.keys().cloned().collect()
    }

    pub fn detector(&self, id: &str) -> Result<Box<dyn FaceDetector>> {
        if let Some(f) = self.detectors.get(id) {
            return f();
        }
        if let Some(path) = id.strip_prefix(PRECOMPUTED_PREFIX) {
            return Ok(Box::new(Precomputed::load(&PathBuf::from(path))?));
        }
        Err(Error::MissingBackend(id.to_string()))
    }

    pub fn mesh(&self, id: &str) -> Result<Box<dyn LandmarkProvider>> {
        if let Some(f) = self.meshes.get(id) {
            return f();
        }
        if let Some(path) = id.strip_prefix(PRECOMPUTED_PREFIX) {
            return Ok(Box::new(Precomputed::load(&PathBuf::from(path))?));
        }
        Err(Error::MissingBackend(id.to_string()))
    }
}
