use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::label::Label;

use super::state::{Annotation, BatchLock, BatchState, Decision, FrameFailure, ReviewBatch, Status, StoreState};

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    AutoAnnotated {
        annotations: Vec<Annotation>,
    },
    FrameFailed {
        failure: FrameFailure,
    },
    BatchOpened {
        batch: ReviewBatch,
    },
    BatchLocked {
        batch_id: String,
        /// `None` releases the lock.
        lock: Option<BatchLock>,
    },
    CorrectionsApplied {
        batch_id: String,
        reviewer: String,
        decisions: Vec<Decision>,
    },
    NoopResubmission {
        batch_id: String,
        reviewer: String,
    },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::AutoAnnotated { .. } => "auto_annotated",
            EventBody::FrameFailed { .. } => "frame_failed",
            EventBody::BatchOpened { .. } => "batch_opened",
            EventBody::BatchLocked { .. } => "batch_locked",
            EventBody::CorrectionsApplied { .. } => "corrections_applied",
            EventBody::NoopResubmission { .. } => "noop_resubmission",
        }
    }
}

/// Fold one event into the state. Events are validated before they are
/// logged, so this never fails; anything that does not fit is ignored.
pub fn apply(state: &mut StoreState, event: &Event) {
    match &event.body {
        EventBody::AutoAnnotated { annotations } => {
            for a in annotations {
                state.failures.remove(&a.frame_id);
                state.annotations.entry(a.frame_id.clone()).or_insert_with(|| a.clone());
            }
        }
        EventBody::FrameFailed { failure } => {
            if !state.annotations.contains_key(&failure.frame_id) {
                state.failures.insert(failure.frame_id.clone(), failure.clone());
            }
        }
        EventBody::BatchOpened { batch } => {
            let mut batch = batch.clone();
            batch.opened_seq = event.seq;
            state.batches.insert(batch.batch_id.clone(), batch);
        }
        EventBody::BatchLocked { batch_id, lock } => {
            if let Some(b) = state.batches.get_mut(batch_id) {
                b.lock = lock.clone();
            }
        }
        EventBody::CorrectionsApplied { batch_id, reviewer, decisions } => {
            for d in decisions {
                if let Some(a) = state.annotations.get_mut(&d.frame_id) {
                    a.label = d.final_label;
                    a.status = Status::Verified;
                    a.reviewer = Some(reviewer.clone());
                    a.reviewed_at = Some(event.ts);
                    if d.final_label == Label::NoFace {
                        a.mouth_box = None;
                    }
                }
            }
            if let Some(b) = state.batches.get_mut(batch_id) {
                b.state = BatchState::Submitted;
                b.lock = None;
                b.decisions = Some(decisions.iter().map(|d| (d.frame_id.clone(), d.final_label)).collect());
            }
        }
        EventBody::NoopResubmission { .. } => {}
    }
}

pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> StoreState {
    let mut state = StoreState::default();
    for e in events {
        apply(&mut state, e);
    }
    state
}
