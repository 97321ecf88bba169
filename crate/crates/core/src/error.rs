use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode video {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid json in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("duplicate video id `{0}`")]
    DuplicateVideoId(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid network spec: {0}")]
    InvalidNetwork(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        /// Weights from the last step whose loss was finite.
        checkpoint: Option<Box<crate::mouth_net::ModelArtifact>>,
    },

    #[error("model artifact error: {0}")]
    Artifact(String),

    #[error("no detector backend registered under `{0}`")]
    MissingBackend(String),

    #[error("degenerate lip extent ({width} x {height} px)")]
    DegenerateMouth { width: f64, height: f64 },

    #[error("unknown batch `{0}`")]
    UnknownBatch(String),

    #[error("unknown frame `{0}`")]
    UnknownFrame(String),

    #[error("unknown video `{0}`")]
    UnknownVideo(String),

    #[error("decisions do not cover batch {batch_id}; missing {missing:?}")]
    IncompleteDecisions { batch_id: String, missing: Vec<String> },

    #[error("batch {0} already submitted with different decisions")]
    AlreadySubmitted(String),

    #[error("batch {batch_id} is locked by another session")]
    LockConflict { batch_id: String },

    #[error("store error: {0}")]
    Store(String),

    #[error("no verified annotations; review at least one batch first")]
    NothingVerified,

    #[error("export error: {0}")]
    Export(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
