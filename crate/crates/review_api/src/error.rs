use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use yawnforge_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    Unauthorized(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{message}")]
    Unprocessable { message: String, missing: Vec<String> },
    #[error("{0}")]
    BadRequest(String),
    #[error("all open batches are checked out; retry in {0} s")]
    Busy(u64),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::Unauthorized(_) => (StatusCode::UNAUTHORIZED, "unauthorized"),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Unprocessable { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_decisions"),
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::Busy(_) => (StatusCode::SERVICE_UNAVAILABLE, "busy"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::UnknownBatch(_) | CoreError::UnknownVideo(_) => ApiError::NotFound(e.to_string()),
            CoreError::UnknownFrame(ref f) => {
                ApiError::Unprocessable { message: e.to_string(), missing: vec![f.clone()] }
            }
            CoreError::LockConflict { .. } | CoreError::AlreadySubmitted(_) => ApiError::Conflict(e.to_string()),
            CoreError::IncompleteDecisions { ref missing, .. } => {
                ApiError::Unprocessable { message: e.to_string(), missing: missing.clone() }
            }
            CoreError::InvalidInput(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        if status.is_server_error() && !matches!(self, ApiError::Busy(_)) {
            log::error!("{self}");
        }
        let mut body = json!({ "error": { "code": code, "message": self.to_string() } });
        if let ApiError::Unprocessable { missing, .. } = &self {
            body["error"]["frame_ids"] = json!(missing);
        }
        let mut response = (status, Json(body)).into_response();
        if let ApiError::Busy(secs) = self {
            if let Ok(v) = HeaderValue::from_str(&secs.to_string()) {
                response.headers_mut().insert(header::RETRY_AFTER, v);
            }
        }
        response
    }
}
