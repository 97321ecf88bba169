use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use yawnforge_core::annotator::AnnotateOptions;
use yawnforge_core::face_pipeline::LipIndices;
use yawnforge_core::ingest::{StillFormat, ViewMapping};
use yawnforge_core::mouth_net::TrainConfig;

pub const STORE_ENV: &str = "YAWNFORGE_STORE";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of source videos.
    pub corpus_root: Option<PathBuf>,
    /// Ingest output: extracted stills and `manifest.json`.
    pub frames_dir: Option<PathBuf>,
    /// Training images in `yawn/` and `no_yawn/` folders.
    pub train_data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub store: Option<PathBuf>,
    /// JSON list of lip landmark indices; the built-in list when unset.
    pub lip_indices: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    #[default]
    Png,
    Jpeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub stride: usize,
    pub format: ImageFormat,
    pub jpeg_quality: u8,
    /// `yawdd`, `none`, or a path to a view-mapping JSON file.
    pub views: String,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { stride: 1, format: ImageFormat::Png, jpeg_quality: 95, views: "yawdd".into() }
    }
}

impl IngestSection {
    pub fn still_format(&self) -> StillFormat {
        match self.format {
            ImageFormat::Png => StillFormat::Png,
            ImageFormat::Jpeg => StillFormat::Jpeg { quality: self.jpeg_quality },
        }
    }

    pub fn view_mapping(&self) -> Result<ViewMapping> {
        match self.views.as_str() {
            "yawdd" => Ok(ViewMapping::yawdd()),
            "none" => Ok(ViewMapping::default()),
            path => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading view mapping {path}"))?;
                serde_json::from_str(&text).with_context(|| format!("parsing view mapping {path}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewSection {
    pub batch_size: usize,
    pub lock_ttl_minutes: i64,
    pub session_ttl_hours: i64,
    pub host: String,
    pub port: u16,
}

impl Default for ReviewSection {
    fn default() -> Self {
        Self { batch_size: 64, lock_ttl_minutes: 30, session_ttl_hours: 12, host: "127.0.0.1".into(), port: 8700 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ExportLayout {
    #[default]
    Classification,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IncludeSet {
    #[default]
    Verified,
    All,
}

impl From<IncludeSet> for yawnforge_core::exporter::Include {
    fn from(v: IncludeSet) -> Self {
        match v {
            IncludeSet::Verified => Self::VerifiedOnly,
            IncludeSet::All => Self::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    pub layout: ExportLayout,
    pub include: IncludeSet,
    /// Fraction of videos in the train split (detection layout).
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self { layout: ExportLayout::Classification, include: IncludeSet::Verified, train_fraction: 0.8, seed: 0 }
    }
}

/// Everything a pipeline run needs. Loaded from TOML; command-line flags are
/// applied on top by the caller.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// When set, replaces `train.seed` and `export.seed`.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub train: TrainConfig,
    pub annotate: AnnotateOptions,
    pub review: ReviewSection,
    pub export: ExportSection,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        if let Some(seed) = cfg.seed {
            cfg.train.seed = seed;
            cfg.export.seed = seed;
        }
        Ok(cfg)
    }

    /// Defaults, then the file (paths relative to the file's directory),
    /// then `YAWNFORGE_STORE` for a store the file leaves unset.
    pub fn load(file: Option<&Path>, env_store: Option<PathBuf>) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let mut cfg = Self::from_toml(&text).with_context(|| format!("in config {}", path.display()))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let p = &mut cfg.paths;
                for field in [
                    &mut p.corpus_root,
                    &mut p.frames_dir,
                    &mut p.train_data,
                    &mut p.model,
                    &mut p.store,
                    &mut p.lip_indices,
                    &mut p.ui_dir,
                ] {
                    rebase(base, field);
                }
                cfg
            }
            None => Self::default(),
        };
        if cfg.paths.store.is_none() {
            cfg.paths.store = env_store.filter(|p| !p.as_os_str().is_empty());
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ingest.stride == 0 {
            bail!("ingest.stride must be at least 1");
        }
        if !(1..=100).contains(&self.ingest.jpeg_quality) {
            bail!("ingest.jpeg_quality must be in 1..=100");
        }
        self.train.validate()?;
        self.annotate.detector.validate()?;
        if self.annotate.chunk_size == 0 {
            bail!("annotate.chunk_size must be positive");
        }
        if self.review.batch_size == 0 {
            bail!("review.batch_size must be positive");
        }
        if self.review.lock_ttl_minutes <= 0 || self.review.session_ttl_hours <= 0 {
            bail!("review lock and session lifetimes must be positive");
        }
        if !(self.export.train_fraction > 0.0 && self.export.train_fraction < 1.0) {
            bail!("export.train_fraction must be strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn store_dir(&self) -> PathBuf {
        self.paths.store.clone().unwrap_or_else(|| PathBuf::from("store"))
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.paths.frames_dir.clone().unwrap_or_else(|| PathBuf::from("frames"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| PathBuf::from("model.yfz"))
    }

    pub fn lip_indices(&self) -> Result<LipIndices> {
        match &self.paths.lip_indices {
            Some(p) => Ok(LipIndices::load(p)?),
            None => Ok(LipIndices::default()),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        yawnforge_core::util::sha256_hex(&json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        PipelineConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("colour = 3").is_err());
        assert!(PipelineConfig::from_toml("[review]\nbatchsize = 3").is_err());
        assert!(PipelineConfig::from_toml("[annotate.detector]\nthreshold = 0.3").is_err());
    }

    #[test]
    fn top_level_seed_reaches_every_stage() {
        let cfg = PipelineConfig::from_toml("seed = 9\n[train]\nseed = 3").unwrap();
        assert_eq!((cfg.train.seed, cfg.export.seed), (9, 9));
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = PipelineConfig::from_toml(
            "[annotate.detector]\nconfidence_threshold = 0.7\n[train]\nepochs = 2\n[review]\nbatch_size = 16",
        )
        .unwrap();
        assert_eq!(cfg.annotate.detector.confidence_threshold, 0.7);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.review.batch_size, 16);
    }

    #[test]
    fn file_store_beats_env_and_env_beats_default() {
        let dir = tempfile::tempdir().unwrap();
        let with_store = dir.path().join("a.toml");
        std::fs::write(&with_store, "[paths]\nstore = \"s\"").unwrap();
        let without = dir.path().join("b.toml");
        std::fs::write(&without, "").unwrap();

        let env = Some(PathBuf::from("/env/store"));
        let a = PipelineConfig::load(Some(&with_store), env.clone()).unwrap();
        assert_eq!(a.store_dir(), dir.path().join("s"));
        let b = PipelineConfig::load(Some(&without), env).unwrap();
        assert_eq!(b.store_dir(), PathBuf::from("/env/store"));
        let c = PipelineConfig::load(None, None).unwrap();
        assert_eq!(c.store_dir(), PathBuf::from("store"));
    }

    #[test]
    fn invalid_values_fail_validation() {
        for text in ["[ingest]\nstride = 0", "[review]\nbatch_size = 0", "[export]\ntrain_fraction = 1.0"] {
            assert!(PipelineConfig::from_toml(text).unwrap().validate().is_err(), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.review.batch_size = 32;
        assert_ne!(a.hash(), b.hash());
    }
}
