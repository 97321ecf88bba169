//! Binary mouth-state CNN: architecture, training and inference.

pub mod artifact;
pub mod augment;
pub mod network;
pub mod preprocess;
pub mod spec;
pub mod train;

use serde::{Deserialize, Serialize};

pub use artifact::ModelArtifact;
pub use augment::{apply_jitter, Augmentation, Jitter};
pub use network::{FeatureMap, Network, Param};
pub use preprocess::{Preprocessing, ResizeFilter};
pub use spec::{
    build_network, count_parameters, Activation, LayerSpec, NetworkOverrides, NetworkSpec, ParameterReport,
};
pub use train::{load_dataset, train, LabeledImage, MetricsReport, SplitConfig, TrainConfig, TrainOutput};

use crate::error::{Error, Result};
use crate::label::MouthState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: MouthState,
    /// Softmax outputs in class order `[yawn, no_yawn]`.
    pub scores: [f64; 2],
    pub confidence: f64,
}

impl Prediction {
    /// Argmax (ties go to `yawn`) with confidence = max score.
    pub fn from_scores(scores: [f64; 2]) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidInput(format!("invalid class scores {scores:?}")));
        }
        let label = if scores[0] >= scores[1] { MouthState::Yawn } else { MouthState::NoYawn };
        Ok(Self { label, scores, confidence: scores[0].max(scores[1]) })
    }
}
