//! Machine annotations, review batches and human corrections.
//!
//! All state changes go through the append-only event log of
//! [`AnnotationStore`]; the current state is always the fold of that log.

mod auto;
mod batching;
mod events;
mod report;
mod state;
mod store;

pub use auto::{auto_annotate, AnnotateOptions, AnnotateSummary, MouthClassifier};
pub use batching::{batch_id, make_batches, DEFAULT_BATCH_SIZE};
pub use events::{apply, replay, Event, EventBody};
pub use report::{agreement_report, progress, AgreementReport, ProgressReport, VideoAgreement, VideoProgress};
pub use state::{
    Annotation, BatchItem, BatchLock, BatchState, Decision, FrameFailure, Ordering, ReviewBatch, Status, StoreState,
};
pub use store::{AnnotationStore, Checkout, CorrectionSummary, CROPS_DIR, EVENTS_FILE, SNAPSHOT_FILE};
