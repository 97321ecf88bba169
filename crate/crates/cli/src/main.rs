use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use chrono::Duration;
use clap::{Parser, Subcommand};
use log::LevelFilter;
use serde_json::Value;
use yawnforge_cli::config::{ExportLayout, ImageFormat, IncludeSet, PipelineConfig, STORE_ENV};
use yawnforge_cli::logging::{self, LogFormat};
use yawnforge_cli::record::{default_run_log, run_stage, Stage};
use yawnforge_cli::stages;
use yawnforge_review_api::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "yawnforge", version, about = "Frame-level yawn labeling pipeline")]
struct Cli {
    /// TOML pipeline config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to append the run record (default: runs.jsonl in the stage's output directory).
    #[arg(long, global = true)]
    run_log: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log_format: LogFormat,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract frames from a directory of videos and write a manifest.
    Ingest {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum)]
        format: Option<ImageFormat>,
        /// `yawdd`, `none` or a view-mapping JSON file.
        #[arg(long)]
        views: Option<String>,
    },
    /// Train the mouth-state classifier on a folder dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Model artifact tools.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Auto-label every frame in a manifest that has no annotation yet.
    Annotate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        detector: Option<String>,
        #[arg(long)]
        mesh: Option<String>,
        #[arg(long)]
        margin: Option<u32>,
        #[arg(long)]
        lips: Option<PathBuf>,
    },
    /// Run the review HTTP service.
    Serve {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lock_ttl_minutes: Option<i64>,
    },
    /// Write a training dataset from the store.
    Export {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        layout: Option<ExportLayout>,
        #[arg(long, value_enum)]
        include: Option<IncludeSet>,
        /// Fraction of videos in the train split.
        #[arg(long)]
        split: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Progress, agreement and class balance; per-video timeline with --video.
    Stats {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        video: Option<String>,
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic demo corpus and mouth-crop dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        crops: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Print the layer and parameter table.
    Inspect { path: PathBuf },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Write to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &Value) {
    emit(&format!("{}\n", serde_json::to_string_pretty(v).expect("json")));
}

fn print_stats(v: &Value) {
    let mut out = String::new();
    let p = &v["progress"];
    let _ = writeln!(
        out,
        "frames: {}  auto: {}  verified: {}  failed: {}  open batches: {}",
        p["total"], p["auto"], p["verified"], p["failed"], p["open_batches"]
    );
    let c = &v["class_balance"]["counts"];
    let _ = writeln!(out, "labels: yawn {}  no_yawn {}  no_face {}", c["yawn"], c["no_yawn"], c["no_face"]);
    let _ = match v["agreement"].as_object() {
        Some(a) => writeln!(
            out,
            "agreement: {:.4} ({} of {} verified; fp {}, fn {})",
            a["agreement_rate"].as_f64().unwrap_or(f64::NAN),
            a["agreed"],
            a["verified"],
            a["fp"],
            a["fn"]
        ),
        None => writeln!(out, "agreement: nothing verified yet"),
    };
    if let Some(t) = v["timeline"].as_object() {
        let episodes: Vec<String> =
            t["episodes"].as_array().into_iter().flatten().map(|e| format!("{}-{}", e[0], e[1])).collect();
        let _ = writeln!(
            out,
            "video {}: yawn episodes at frames [{}]",
            t["video_id"].as_str().unwrap_or(""),
            episodes.join(", ")
        );
    }
    let _ = writeln!(out, "store hash: {}", p["store_hash"].as_str().unwrap_or(""));
    emit(&out);
}

fn serve(cfg: &PipelineConfig) -> Result<Value> {
    let mut svc = ServiceConfig::new(cfg.store_dir());
    svc.lock_ttl = Duration::minutes(cfg.review.lock_ttl_minutes);
    svc.session_ttl = Duration::hours(cfg.review.session_ttl_hours);
    svc.batch_size = cfg.review.batch_size;
    svc.ui_dir = cfg.paths.ui_dir.clone();
    let state = Arc::new(AppState::open(svc)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let addr = format!("{}:{}", cfg.review.host, cfg.review.port);
        let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
        log::info!("review service listening on http://{}", listener.local_addr()?);
        yawnforge_review_api::serve(listener, state.clone(), async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(serde_json::to_value(state.progress())?)
}

fn run(cli: Cli) -> Result<()> {
    let env_store = std::env::var_os(STORE_ENV).map(PathBuf::from);
    let mut cfg = PipelineConfig::load(cli.config.as_deref(), env_store)?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let log_in = |dir: &Path| cli.run_log.clone().unwrap_or_else(|| default_run_log(dir));

    match cli.command {
        Command::Ingest { root, out, stride, format, views } => {
            set_path(&mut cfg.paths.corpus_root, root);
            set_path(&mut cfg.paths.frames_dir, out);
            set(&mut cfg.ingest.stride, stride);
            set(&mut cfg.ingest.format, format);
            set(&mut cfg.ingest.views, views);
            let v = run_stage(Stage::Ingest, &cfg, args, &log_in(&cfg.frames_dir()), stages::run_ingest)?;
            print_json(&v);
        }
        Command::Train { data, out, seed, epochs, batch_size, learning_rate } => {
            set_path(&mut cfg.paths.train_data, data);
            set_path(&mut cfg.paths.model, out);
            set(&mut cfg.train.seed, seed);
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.learning_rate, learning_rate);
            let model = cfg.model_path();
            let dir = model.parent().map(Path::to_path_buf).unwrap_or_default();
            let v = run_stage(Stage::Train, &cfg, args, &log_in(&dir), stages::run_train)?;
            print_json(&v["metrics"]);
        }
        Command::Model { command: ModelCommand::Inspect { path } } => {
            emit(&stages::inspect_model(&path)?);
        }
        Command::Annotate { manifest, model, store, threshold, detector, mesh, margin, lips } => {
            set_path(&mut cfg.paths.model, model);
            set_path(&mut cfg.paths.store, store);
            set_path(&mut cfg.paths.lip_indices, lips);
            set(&mut cfg.annotate.detector.confidence_threshold, threshold);
            set(&mut cfg.annotate.detector.backend_id, detector);
            set(&mut cfg.annotate.mesh_backend, mesh);
            set(&mut cfg.annotate.margin_px, margin);
            let manifest = stages::manifest_path(&cfg, manifest.as_deref());
            let v = run_stage(Stage::Annotate, &cfg, args, &log_in(&cfg.store_dir()), |c| {
                stages::run_annotate(c, &manifest)
            })?;
            print_json(&v["summary"]);
        }
        Command::Serve { store, host, port, ui_dir, batch_size, lock_ttl_minutes } => {
            set_path(&mut cfg.paths.store, store);
            set_path(&mut cfg.paths.ui_dir, ui_dir);
            set(&mut cfg.review.host, host);
            set(&mut cfg.review.port, port);
            set(&mut cfg.review.batch_size, batch_size);
            set(&mut cfg.review.lock_ttl_minutes, lock_ttl_minutes);
            run_stage(Stage::Serve, &cfg, args, &log_in(&cfg.store_dir()), serve)?;
        }
        Command::Export { store, out, layout, include, split, seed } => {
            set_path(&mut cfg.paths.store, store);
            set(&mut cfg.export.layout, layout);
            set(&mut cfg.export.include, include);
            set(&mut cfg.export.train_fraction, split);
            set(&mut cfg.export.seed, seed);
            let v = run_stage(Stage::Export, &cfg, args, &log_in(&cfg.store_dir()), |c| stages::run_export(c, &out))?;
            print_json(&v);
        }
        Command::Stats { store, video, plot, json } => {
            set_path(&mut cfg.paths.store, store);
            let v = run_stage(Stage::Stats, &cfg, args, &log_in(&cfg.store_dir()), |c| {
                stages::run_stats(c, video.as_deref(), plot.as_deref())
            })?;
            if json {
                print_json(&v);
            } else {
                print_stats(&v);
            }
        }
        Command::Synth { out, crops, seed } => {
            let v = run_stage(Stage::Synth, &cfg, args, &log_in(&out), |_| stages::run_synth(&out, crops, seed))?;
            print_json(&v);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => LevelFilter::Warn,
        (false, 0) => LevelFilter::Info,
        (false, 1) => LevelFilter::Debug,
        _ => LevelFilter::Trace,
    };
    logging::init(cli.log_format, level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
