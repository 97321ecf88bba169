//! Semi-automated frame-level yawn labeling.
//!
//! The pipeline runs in four stages: `ingest` turns videos into frame
//! stills and a manifest, `face_pipeline` finds the mouth in each frame,
//! `mouth_net` classifies the mouth crop, and `annotator` stores machine
//! labels and human corrections. `exporter` writes the verified result as
//! classification or detection datasets.

pub mod annotator;
pub mod clock;
pub mod error;
pub mod exporter;
pub mod face_pipeline;
pub mod fixtures;
pub mod ingest;
pub mod label;
pub mod mouth_net;
pub mod util;

pub use error::{Error, Result};
pub use label::{Label, MouthState};
