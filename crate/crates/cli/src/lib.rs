//! Pipeline driver behind the `yawnforge` binary: layered configuration,
//! per-stage runners and the JSONL run log.

pub mod config;
pub mod logging;
pub mod record;
pub mod stages;

pub use config::PipelineConfig;
pub use record::{run_stage, RunRecord, Stage};
