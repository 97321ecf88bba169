use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::PipelineConfig;

pub const RUN_LOG_FILE: &str = "runs.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Train,
    Annotate,
    Serve,
    Export,
    Stats,
    Synth,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Annotate => "annotate",
            Stage::Serve => "serve",
            Stage::Export => "export",
            Stage::Stats => "stats",
            Stage::Synth => "synth",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub export: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub yawnforge: String,
    pub model_format: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            yawnforge: env!("CARGO_PKG_VERSION").to_string(),
            model_format: yawnforge_core::mouth_net::artifact::FORMAT.to_string(),
        }
    }
}

/// One line of `runs.jsonl`: the effective config, its hash, seeds and tool
/// versions, plus whatever the stage reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub stage: Stage,
    pub status: RunStatus,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub config_hash: String,
    pub seeds: Seeds,
    pub versions: Versions,
    pub args: Vec<String>,
    pub config: Value,
    #[serde(default)]
    pub outputs: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn start(stage: Stage, cfg: &PipelineConfig, args: Vec<String>) -> Self {
        let started_at = Utc::now();
        let config_hash = cfg.hash();
        Self {
            run_id: format!(
                "{}-{}-{}",
                stage.as_str(),
                started_at.to_rfc3339_opts(SecondsFormat::Millis, true),
                &config_hash[..8]
            ),
            stage,
            status: RunStatus::Ok,
            started_at,
            finished_at: started_at,
            config_hash,
            seeds: Seeds { train: cfg.train.seed, export: cfg.export.seed },
            versions: Versions::default(),
            args,
            config: serde_json::to_value(cfg).expect("config serializes"),
            outputs: Value::Null,
            error: None,
        }
    }

    pub fn finish(mut self, outcome: &Result<Value>) -> Self {
        self.finished_at = Utc::now();
        match outcome {
            Ok(v) => self.outputs = v.clone(),
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(format!("{e:#}"));
            }
        }
        self
    }

    pub fn append(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut line = serde_json::to_vec(self)?;
        line.push(b'\n');
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening run log {}", path.display()))?;
        f.write_all(&line)?;
        Ok(())
    }
}

pub fn read_run_log(path: &Path) -> Result<Vec<RunRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).context("malformed run record"))
        .collect()
}

pub fn default_run_log(dir: &Path) -> PathBuf {
    dir.join(RUN_LOG_FILE)
}

/// Run `body`, then append its record to `log_path` whether it succeeded
/// or not.
pub fn run_stage(
    stage: Stage,
    cfg: &PipelineConfig,
    args: Vec<String>,
    log_path: &Path,
    body: impl FnOnce(&PipelineConfig) -> Result<Value>,
) -> Result<Value> {
    let record = RunRecord::start(stage, cfg, args);
    let outcome = cfg.validate().and_then(|_| body(cfg));
    let record = record.finish(&outcome);
    if let Err(e) = record.append(log_path) {
        log::warn!("could not write run record: {e:#}");
    }
    outcome
}
