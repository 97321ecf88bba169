use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::face_pipeline::MouthBox;
use crate::label::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Auto,
    Verified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub frame_id: String,
    pub video_id: String,
    pub frame_index: usize,
    /// Frame still this annotation was computed from.
    pub image_path: String,
    pub frame_width: u32,
    pub frame_height: u32,
    pub label: Label,
    /// Classifier confidence in `[0, 1]`; 0 for `no_face`.
    pub confidence: f64,
    pub status: Status,
    /// Machine label; never changed after creation.
    pub auto_label: Label,
    pub reviewer: Option<String>,
    pub reviewed_at: Option<DateTime<Utc>>,
    pub mouth_box: Option<MouthBox>,
    /// Relative to the store directory.
    pub crop_path: Option<String>,
    /// Why a frame ended up `no_face`, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame_id: String,
    pub video_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchState {
    Open,
    Submitted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    #[default]
    ByVideo,
    ByConfidenceAsc,
}

impl std::str::FromStr for Ordering {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "by_video" => Ok(Ordering::ByVideo),
            "by_confidence_asc" => Ok(Ordering::ByConfidenceAsc),
            other => Err(crate::Error::InvalidInput(format!("unknown ordering `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub frame_id: String,
    pub crop_path: Option<String>,
    pub auto_label: Label,
    pub confidence: f64,
    /// Set for `no_face` items so the reviewer can rescue detector misses.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchLock {
    pub session: String,
    pub reviewer: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewBatch {
    pub batch_id: String,
    pub items: Vec<BatchItem>,
    pub state: BatchState,
    #[serde(default)]
    pub lock: Option<BatchLock>,
    /// Sequence number of the event that opened the batch.
    #[serde(default)]
    pub opened_seq: u64,
    /// Final labels as submitted, for idempotence checks.
    #[serde(default)]
    pub decisions: Option<BTreeMap<String, Label>>,
}

impl ReviewBatch {
    pub fn frame_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.frame_id.as_str())
    }

    pub fn lock_active(&self, now: DateTime<Utc>) -> Option<&BatchLock> {
        self.lock.as_ref().filter(|l| l.expires_at > now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub frame_id: String,
    pub final_label: Label,
}

/// Everything the store knows. A pure function of the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreState {
    pub annotations: BTreeMap<String, Annotation>,
    pub failures: BTreeMap<String, FrameFailure>,
    pub batches: BTreeMap<String, ReviewBatch>,
}

impl StoreState {
    pub fn verified_count(&self) -> usize {
        self.annotations.values().filter(|a| a.status == Status::Verified).count()
    }

    /// Pending annotations not already in an open batch.
    pub fn free_pending(&self) -> Vec<&Annotation> {
        let taken: std::collections::HashSet<&str> =
            self.batches.values().filter(|b| b.state == BatchState::Open).flat_map(|b| b.frame_ids()).collect();
        self.annotations.values().filter(|a| a.status == Status::Auto && !taken.contains(a.frame_id.as_str())).collect()
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("store state serializes");
        crate::util::sha256_hex(&bytes)
    }
}
