//! HTTP annotation service over an [`AnnotationQueue`].

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use alc3_core::annotator::{AnnotationQueue, AnnotationResponse, Progress, QueueError, SessionStatus};
use alc3_core::data::LabelValue;
use alc3_core::engine::Strategy;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

/// Annotator identity used when authentication is off and no header names one.
pub const LOCAL_ANNOTATOR: &str = "local";
pub const ANNOTATOR_HEADER: &str = "x-annotator";

/// Static facts about the run, shown by `/api/session`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub strategy: Strategy,
    pub flag_fraction: f64,
    pub dataset_size: usize,
    pub labels: Vec<String>,
}

#[derive(Clone)]
pub struct AppState {
    queue: Arc<AnnotationQueue>,
    info: RunInfo,
    /// Bearer token to annotator name; empty when authentication is off.
    tokens: Arc<HashMap<String, String>>,
}

impl AppState {
    /// `tokens` maps annotator names to bearer tokens.
    pub fn new(queue: Arc<AnnotationQueue>, info: RunInfo, tokens: impl IntoIterator<Item = (String, String)>) -> Self {
        let tokens = tokens.into_iter().map(|(name, token)| (token, name)).collect();
        Self {
            queue,
            info,
            tokens: Arc::new(tokens),
        }
    }

    fn auth_required(&self) -> bool {
        !self.tokens.is_empty()
    }

    fn annotator(&self, headers: &HeaderMap) -> Result<String, ApiError> {
        if self.auth_required() {
            let token = headers
                .get(header::AUTHORIZATION)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.strip_prefix("Bearer "))
                .ok_or(ApiError::Unauthorized)?;
            return self.tokens.get(token.trim()).cloned().ok_or(ApiError::Unauthorized);
        }
        Ok(headers
            .get(ANNOTATOR_HEADER)
            .and_then(|v| v.to_str().ok())
            .filter(|v| !v.is_empty())
            .unwrap_or(LOCAL_ANNOTATOR)
            .to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub iteration: usize,
    pub status: SessionStatus,
    pub progress: Progress,
    pub note: Option<String>,
    pub lease_seconds: u64,
    pub auth_required: bool,
    #[serde(flatten)]
    pub info: RunInfo,
}

/// Body of `POST /api/annotate`. The annotator comes from the bearer token when
/// authentication is on; otherwise from this field or the `X-Annotator` header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotateBody {
    pub id: String,
    pub label: LabelValue,
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotateReply {
    pub accepted: String,
    pub remaining: usize,
    pub progress: Progress,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("missing or unknown annotator token")]
    Unauthorized,
    #[error(transparent)]
    Queue(#[from] QueueError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::Unauthorized => StatusCode::UNAUTHORIZED,
            ApiError::Queue(QueueError::UnknownId(_)) => StatusCode::NOT_FOUND,
            ApiError::Queue(QueueError::Conflict(_)) => StatusCode::CONFLICT,
            ApiError::Queue(QueueError::InvalidLabel { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Queue(QueueError::Busy) => StatusCode::CONFLICT,
            ApiError::Queue(QueueError::Closed { .. }) => StatusCode::GONE,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn session(State(app): State<AppState>) -> Json<SessionView> {
    let q = &app.queue;
    Json(SessionView {
        iteration: q.iteration(),
        status: q.status(),
        progress: q.progress(),
        note: q.note(),
        lease_seconds: q.lease_duration().as_secs(),
        auth_required: app.auth_required(),
        info: app.info.clone(),
    })
}

async fn next(State(app): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    let who = app.annotator(&headers)?;
    Ok(match app.queue.lease_next(&who) {
        Some(request) => Json(request).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn annotate(
    State(app): State<AppState>,
    headers: HeaderMap,
    Json(body): Json<AnnotateBody>,
) -> Result<Json<AnnotateReply>, ApiError> {
    let who = if app.auth_required() {
        app.annotator(&headers)?
    } else {
        body.annotator.clone().unwrap_or(app.annotator(&headers)?)
    };
    let outcome = app.queue.submit(AnnotationResponse {
        id: body.id,
        label: body.label,
        annotator: who,
        timestamp: 0,
    })?;
    Ok(Json(AnnotateReply {
        accepted: outcome.accepted,
        remaining: outcome.remaining,
        progress: app.queue.progress(),
    }))
}

async fn history(State(app): State<AppState>) -> impl IntoResponse {
    Json(app.queue.history())
}

async fn unknown_api() -> Response {
    (
        StatusCode::NOT_FOUND,
        Json(serde_json::json!({ "error": "no such endpoint" })),
    )
        .into_response()
}

const PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>ALC3 annotation service</title></head>
<body>
<h1>ALC3 annotation service</h1>
<p>No console bundle configured. Start the service with <code>--console-dir</code> pointing at a built console,
or use the JSON API: <code>/api/session</code>, <code>/api/next</code>, <code>/api/annotate</code>,
<code>/api/history</code>, <code>/api/health</code>.</p>
</body></html>
";

async fn placeholder() -> Html<&'static str> {
    Html(PLACEHOLDER)
}

pub fn router(state: AppState, console_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/session", get(session))
        .route("/api/next", get(next))
        .route("/api/annotate", post(annotate))
        .route("/api/history", get(history))
        .route("/api/{*rest}", get(unknown_api).post(unknown_api))
        .with_state(state);
    match console_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(placeholder),
    }
}
