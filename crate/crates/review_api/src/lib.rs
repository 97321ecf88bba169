//! JSON-over-HTTP review service.
//!
//! | method | path | purpose |
//! |---|---|---|
//! | POST | `/v1/session` | `{reviewer, key?}` → session token |
//! | POST | `/v1/batches/checkout` | `{ordering?}` → `{batch}` (null when done) |
//! | POST | `/v1/batches/{id}/submit` | `{decisions: [{frame_id, final_label}]}` |
//! | POST | `/v1/batches/{id}/release` | give a checked-out batch back |
//! | GET | `/v1/progress` | counts, agreement and store hash |
//! | GET | `/v1/crops/{frame_id}` | crop image bytes |
//!
//! Session tokens go in `Authorization: Bearer <token>` or, for image tags,
//! the `access_token` query parameter. When the store directory holds a
//! `reviewers.json`, opening a session requires the reviewer's key.

mod error;
mod sessions;

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;
use yawnforge_core::annotator::{progress, AnnotationStore, Checkout, Decision, Ordering, ProgressReport, ReviewBatch};
use yawnforge_core::clock::{Clock, SystemClock};
use yawnforge_core::Label;

pub use error::ApiError;
pub use sessions::{Reviewers, SessionToken, Sessions, REVIEWERS_FILE, SESSIONS_FILE};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub store_dir: PathBuf,
    pub lock_ttl: Duration,
    pub session_ttl: Duration,
    pub batch_size: usize,
    /// Static files (the review UI) served at `/`.
    pub ui_dir: Option<PathBuf>,
    /// Defaults to `<store_dir>/reviewers.json`.
    pub reviewers_path: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        Self {
            store_dir: store_dir.into(),
            lock_ttl: Duration::minutes(30),
            session_ttl: Duration::hours(12),
            batch_size: yawnforge_core::annotator::DEFAULT_BATCH_SIZE,
            ui_dir: None,
            reviewers_path: None,
        }
    }
}

pub struct AppState {
    cfg: ServiceConfig,
    clock: Arc<dyn Clock>,
    store: Mutex<AnnotationStore>,
    sessions: Mutex<Sessions>,
    reviewers: Option<Reviewers>,
}

impl AppState {
    pub fn open(cfg: ServiceConfig) -> yawnforge_core::Result<Self> {
        Self::open_with_clock(cfg, Arc::new(SystemClock))
    }

    pub fn open_with_clock(cfg: ServiceConfig, clock: Arc<dyn Clock>) -> yawnforge_core::Result<Self> {
        if cfg.batch_size == 0 {
            return Err(yawnforge_core::Error::Config("batch_size must be positive".into()));
        }
        let store = AnnotationStore::open(&cfg.store_dir, clock.clone())?;
        let sessions = Sessions::load(Some(cfg.store_dir.join(SESSIONS_FILE)))?;
        let reviewers_path = cfg.reviewers_path.clone().unwrap_or_else(|| cfg.store_dir.join(REVIEWERS_FILE));
        let reviewers = if reviewers_path.exists() {
            Some(Reviewers::load(&reviewers_path)?)
        } else {
            log::warn!("no {} found; any reviewer name may open a session", reviewers_path.display());
            None
        };
        Ok(Self { cfg, clock, store: Mutex::new(store), sessions: Mutex::new(sessions), reviewers })
    }

    pub fn progress(&self) -> ProgressReport {
        progress(self.store.lock().state())
    }

    fn session(&self, headers: &HeaderMap, query: &TokenQuery) -> Result<SessionToken, ApiError> {
        let from_header = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        let token = from_header
            .or(query.access_token.as_deref())
            .ok_or_else(|| ApiError::Unauthorized("missing bearer token".into()))?;
        self.sessions.lock().validate(token, self.clock.now())
    }
}

#[derive(Debug, Default, Deserialize)]
struct TokenQuery {
    access_token: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SessionRequest {
    reviewer: String,
    #[serde(default)]
    key: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct CheckoutRequest {
    #[serde(default)]
    ordering: Option<Ordering>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchItemView {
    pub frame_id: String,
    pub crop_url: String,
    pub auto_label: Label,
    pub confidence: f64,
    pub flagged: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchView {
    pub batch_id: String,
    pub items: Vec<BatchItemView>,
    pub lock_expires_at: Option<DateTime<Utc>>,
}

impl From<&ReviewBatch> for BatchView {
    fn from(b: &ReviewBatch) -> Self {
        Self {
            batch_id: b.batch_id.clone(),
            items: b
                .items
                .iter()
                .map(|i| BatchItemView {
                    frame_id: i.frame_id.clone(),
                    crop_url: format!("/v1/crops/{}", i.frame_id),
                    auto_label: i.auto_label,
                    confidence: i.confidence,
                    flagged: i.flagged,
                })
                .collect(),
            lock_expires_at: b.lock.as_ref().map(|l| l.expires_at),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckoutResponse {
    pub batch: Option<BatchView>,
}

#[derive(Debug, Deserialize)]
struct SubmitRequest {
    decisions: Vec<Decision>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub batch_id: String,
    pub verified_delta: usize,
    pub corrected: usize,
    pub noop: bool,
    pub progress: ProgressReport,
}

type Shared = Arc<AppState>;

async fn open_session(
    State(app): State<Shared>,
    Json(req): Json<SessionRequest>,
) -> Result<Json<SessionToken>, ApiError> {
    let reviewer = req.reviewer.trim();
    if reviewer.is_empty() {
        return Err(ApiError::BadRequest("reviewer name is empty".into()));
    }
    if let Some(r) = &app.reviewers {
        r.check(reviewer, req.key.as_deref())?;
    }
    let token = app.sessions.lock().issue(reviewer, app.clock.now(), app.cfg.session_ttl)?;
    Ok(Json(token))
}

async fn checkout(
    State(app): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
    body: Option<Json<CheckoutRequest>>,
) -> Result<Json<CheckoutResponse>, ApiError> {
    let session = app.session(&headers, &q)?;
    let ordering = body.and_then(|Json(b)| b.ordering).unwrap_or_default();
    let outcome =
        app.store.lock().checkout(&session.token, &session.reviewer, ordering, app.cfg.batch_size, app.cfg.lock_ttl)?;
    match outcome {
        Checkout::Batch(b) => Ok(Json(CheckoutResponse { batch: Some(BatchView::from(&b)) })),
        Checkout::Empty => Ok(Json(CheckoutResponse { batch: None })),
        Checkout::Busy { retry_after_secs } => Err(ApiError::Busy(retry_after_secs)),
    }
}

async fn submit(
    State(app): State<Shared>,
    UrlPath(batch_id): UrlPath<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<SubmitResponse>, ApiError> {
    let session = app.session(&headers, &q)?;
    let mut store = app.store.lock();
    let summary = store.submit(&session.token, &batch_id, &req.decisions, &session.reviewer)?;
    Ok(Json(SubmitResponse {
        batch_id: summary.batch_id,
        verified_delta: summary.verified_delta,
        corrected: summary.corrected,
        noop: summary.noop,
        progress: progress(store.state()),
    }))
}

async fn release(
    State(app): State<Shared>,
    UrlPath(batch_id): UrlPath<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = app.session(&headers, &q)?;
    app.store.lock().release(&session.token, &batch_id)?;
    Ok(Json(serde_json::json!({ "released": batch_id })))
}

async fn get_progress(State(app): State<Shared>) -> Json<ProgressReport> {
    Json(app.progress())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    }
}

async fn get_crop(
    State(app): State<Shared>,
    UrlPath(frame_id): UrlPath<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    app.session(&headers, &q)?;
    let path = {
        let store = app.store.lock();
        let a = store
            .state()
            .annotations
            .get(&frame_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown frame `{frame_id}`")))?;
        // no_face frames have no crop; show the whole frame instead
        match (&a.crop_path, store.dir()) {
            (Some(rel), Some(dir)) => dir.join(rel),
            _ => PathBuf::from(&a.image_path),
        }
    };
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::NotFound(format!("image for `{frame_id}` unavailable: {e}")))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(app: Shared) -> Router {
    let api = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/session", post(open_session))
        .route("/v1/batches/checkout", post(checkout))
        .route("/v1/batches/{id}/submit", post(submit))
        .route("/v1/batches/{id}/release", post(release))
        .route("/v1/progress", get(get_progress))
        .route("/v1/crops/{frame_id}", get(get_crop));
    let api = match &app.cfg.ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(app)
}

/// Serve until `shutdown` resolves, then flush the store snapshot.
pub async fn serve(
    listener: TcpListener,
    app: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app.clone())).with_graceful_shutdown(shutdown).await?;
    if let Err(e) = app.store.lock().checkpoint() {
        log::warn!("failed to write store snapshot on shutdown: {e}");
    }
    Ok(())
}
