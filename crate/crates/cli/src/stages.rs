use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};
use yawnforge_core::annotator::{agreement_report, auto_annotate, progress, AnnotationStore};
use yawnforge_core::clock::SystemClock;
use yawnforge_core::exporter::{
    class_balance, export_classification, export_detection, plot_timeline, timeline_report, DetectionOptions,
};
use yawnforge_core::face_pipeline::BackendRegistry;
use yawnforge_core::fixtures;
use yawnforge_core::ingest::{self, CorpusManifest, IngestOptions, MANIFEST_FILE};
use yawnforge_core::mouth_net::{load_dataset, train, ModelArtifact};
use yawnforge_core::util;

use crate::config::{ExportLayout, PipelineConfig};

pub fn run_ingest(cfg: &PipelineConfig) -> Result<Value> {
    let root = cfg
        .paths
        .corpus_root
        .as_deref()
        .ok_or_else(|| anyhow!("no corpus root; pass --root or set paths.corpus_root"))?;
    let out = cfg.frames_dir();
    let opts = IngestOptions {
        stride: cfg.ingest.stride,
        format: cfg.ingest.still_format(),
        view_mapping: cfg.ingest.view_mapping()?,
    };
    let manifest = ingest::ingest(root, &out, &opts)?;
    log::info!("ingested {} videos, {} frames into {}", manifest.videos.len(), manifest.total_frames, out.display());
    Ok(json!({
        "corpus_id": manifest.corpus_id,
        "videos": manifest.videos.len(),
        "total_frames": manifest.total_frames,
        "manifest": out.join(MANIFEST_FILE),
    }))
}

fn metrics_path(model: &Path) -> PathBuf {
    let mut name = model.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".metrics.json");
    model.with_file_name(name)
}

pub fn run_train(cfg: &PipelineConfig) -> Result<Value> {
    let data = cfg
        .paths
        .train_data
        .as_deref()
        .ok_or_else(|| anyhow!("no training data; pass --data <dir> with yawn/ and no_yawn/ folders"))?;
    let dataset = load_dataset(data)?;
    log::info!("training on {} images from {}", dataset.len(), data.display());
    let out = train(&dataset, &cfg.train)?;
    let model_path = cfg.model_path();
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        util::create_dir_all(dir)?;
    }
    out.model.save(&model_path)?;
    let metrics = serde_json::to_value(&out.metrics)?;
    util::write_json(&metrics_path(&model_path), &out.metrics)?;
    for w in &out.metrics.warnings {
        log::warn!("{w}");
    }
    let model_sha = util::sha256_hex(&std::fs::read(&model_path)?);
    Ok(json!({ "model": model_path, "model_sha256": model_sha, "metrics": metrics }))
}

pub fn inspect_model(path: &Path) -> Result<String> {
    let artifact = ModelArtifact::load(path)?;
    Ok(artifact.inspect()?)
}

/// Manifest path from `--manifest`, falling back to the frames directory.
pub fn manifest_path(cfg: &PipelineConfig, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| cfg.frames_dir().join(MANIFEST_FILE))
}

pub fn run_annotate(cfg: &PipelineConfig, manifest: &Path) -> Result<Value> {
    if !manifest.is_file() {
        bail!("manifest {} not found: run ingest or supply --manifest", manifest.display());
    }
    let model_path = cfg.model_path();
    if !model_path.is_file() {
        bail!("model artifact {} not found: run train or supply --model", model_path.display());
    }
    let manifest = CorpusManifest::load(manifest)?;
    let model = ModelArtifact::load(&model_path)?;
    let mut opts = cfg.annotate.clone();
    opts.lips = cfg.lip_indices()?;
    let store_dir = cfg.store_dir();
    let mut store = AnnotationStore::open(&store_dir, Arc::new(SystemClock))?;
    let summary = auto_annotate(&mut store, &manifest, &model, &BackendRegistry::with_builtin(), &opts)?;
    if summary.annotated == 0 && summary.failed == 0 {
        log::info!("nothing to do: {} frames already annotated", summary.already_annotated);
    } else {
        log::info!(
            "annotated {} frames ({} without a face, {} failed); {} were already annotated",
            summary.annotated,
            summary.no_face,
            summary.failed,
            summary.already_annotated
        );
    }
    let model_sha = util::sha256_hex(&std::fs::read(&model_path)?);
    Ok(json!({
        "summary": summary,
        "corpus_id": manifest.corpus_id,
        "model_sha256": model_sha,
        "store": store_dir,
        "store_hash": store.hash(),
    }))
}

fn open_existing_store(cfg: &PipelineConfig) -> Result<AnnotationStore> {
    let dir = cfg.store_dir();
    if !dir.is_dir() {
        bail!("store {} does not exist: run annotate or supply --store", dir.display());
    }
    Ok(AnnotationStore::open(&dir, Arc::new(SystemClock))?)
}

pub fn run_export(cfg: &PipelineConfig, out: &Path) -> Result<Value> {
    let store = open_existing_store(cfg)?;
    let include = cfg.export.include.into();
    let manifest = match cfg.export.layout {
        ExportLayout::Classification => export_classification(&store, out, include)?,
        ExportLayout::Detection => export_detection(
            &store,
            out,
            &DetectionOptions { include, train_fraction: cfg.export.train_fraction, seed: cfg.export.seed },
        )?,
    };
    log::info!("exported {:?} to {}", manifest.counts, out.display());
    Ok(serde_json::to_value(&manifest)?)
}

pub fn run_stats(cfg: &PipelineConfig, video: Option<&str>, plot: Option<&Path>) -> Result<Value> {
    let store = open_existing_store(cfg)?;
    let state = store.state();
    let mut out = json!({
        "progress": progress(state),
        "class_balance": class_balance(state),
        "agreement": agreement_report(state).ok(),
    });
    if let Some(video) = video {
        let timeline = timeline_report(state, video)?;
        if let Some(path) = plot {
            plot_timeline(&timeline, path).with_context(|| format!("plotting to {}", path.display()))?;
        }
        out["timeline"] = serde_json::to_value(&timeline)?;
    } else if plot.is_some() {
        bail!("--plot needs --video");
    }
    Ok(out)
}

/// Synthetic demo material: a two-video GIF corpus with its ground truth
/// and a folder dataset of mouth crops.
pub fn run_synth(out: &Path, crops: usize, seed: u64) -> Result<Value> {
    let corpus = out.join("corpus");
    util::create_dir_all(&corpus)?;
    let truth = fixtures::write_standard_corpus(&corpus)?;
    util::write_json(&out.join("truth.json"), &truth)?;
    let data = fixtures::mouth_crop_dataset(crops, seed);
    fixtures::write_dataset(&out.join("crops"), &data)?;
    Ok(json!({
        "corpus": corpus,
        "videos": truth.videos.len(),
        "frames": truth.videos.values().map(|v| v.labels.len()).sum::<usize>(),
        "crops": out.join("crops"),
        "crop_count": data.len(),
    }))
}
