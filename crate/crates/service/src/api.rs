//! HTTP routes.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lro_core::instruction::{decode_png, parse_spec, FieldError, SpecError, Warning};
use lro_core::lro::RunEvent;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::app::{App, StartError};
use crate::session::{RunRequest, Session, SessionState};

const UPLOAD_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Throttled(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("invalid instruction document")]
    Validation(Vec<FieldError>),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::Throttled(_) => StatusCode::TOO_MANY_REQUESTS,
            Self::BadRequest(_) | Self::Validation(_) => StatusCode::BAD_REQUEST,
        };
        let body = match &self {
            Self::Validation(fields) => json!({ "error": self.to_string(), "fields": fields }),
            _ => json!({ "error": self.to_string() }),
        };
        (status, Json(body)).into_response()
    }
}

impl From<SpecError> for ApiError {
    fn from(e: SpecError) -> Self {
        match e {
            SpecError::Validation(fields) => Self::Validation(fields),
            SpecError::Parse { path, message } => Self::Validation(vec![FieldError { path, message }]),
            other => Self::BadRequest(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/run", post(start_run))
        .route("/sessions/{id}/events", get(poll_events))
        .route("/sessions/{id}/cancel", post(cancel))
        .route("/sessions/{id}/result", get(result))
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT))
        .with_state(app)
}

fn lookup(app: &App, id: &str) -> ApiResult<Arc<Session>> {
    app.get(id).ok_or_else(|| ApiError::NotFound(id.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    #[serde(default)]
    pub warnings: Vec<Warning>,
}

async fn create_session(State(app): State<Arc<App>>, mut form: Multipart) -> ApiResult<(StatusCode, Json<Created>)> {
    let (mut image, mut spec) = (None, None);
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::BadRequest(e.to_string()))? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::BadRequest(e.to_string()))?;
        match name.as_str() {
            "image" => image = Some(bytes),
            "spec" => spec = Some(bytes),
            other => return Err(ApiError::BadRequest(format!("unexpected form field '{other}'"))),
        }
    }
    let spec = spec.ok_or_else(|| ApiError::BadRequest("missing form field 'spec'".into()))?;
    let document = std::str::from_utf8(&spec).map_err(|_| ApiError::BadRequest("spec is not UTF-8".into()))?;
    let image = image
        .map(|b| {
            decode_png(&b).map_err(|message| {
                ApiError::Validation(vec![FieldError {
                    path: "image".into(),
                    message,
                }])
            })
        })
        .transpose()?;
    let spec = parse_spec(document, None, image)?;
    let warnings = spec.validate();
    let id = uuid::Uuid::new_v4().simple().to_string();
    app.insert(Session::new(id.clone(), spec))
        .map_err(|e| ApiError::Throttled(e.to_string()))?;
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(Created { id, warnings })))
}

async fn describe(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = lookup(&app, &id)?;
    let d = s.data();
    Ok(Json(json!({
        "id": s.id,
        "state": d.state,
        "events": d.events.len(),
        "error": d.error,
    })))
}

async fn start_run(State(app): State<Arc<App>>, Path(id): Path<String>, body: Bytes) -> ApiResult<StatusCode> {
    let req: RunRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RunRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(format!("run request: {e}")))?
    };
    let s = lookup(&app, &id)?;
    app.start(s, req).map_err(|e| match e {
        StartError::State(_) => ApiError::Conflict(e.to_string()),
        StartError::Busy(_) => ApiError::Throttled(e.to_string()),
    })?;
    Ok(StatusCode::ACCEPTED)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct PollQuery {
    after: usize,
    wait_ms: u64,
}

/// `events[i]` carries index `from + i`; indices start at 1 and `next` is the `after`
/// for the following poll.
#[derive(Debug, Serialize, Deserialize)]
pub struct EventPage {
    pub state: SessionState,
    pub from: usize,
    pub events: Vec<RunEvent>,
    pub next: usize,
}

fn page(s: &Session, after: usize) -> (EventPage, bool) {
    let d = s.data();
    let start = after.min(d.events.len());
    let page = EventPage {
        state: d.state,
        from: start + 1,
        events: d.events[start..].to_vec(),
        next: d.events.len(),
    };
    let ready = !page.events.is_empty() || d.state.is_terminal();
    (page, ready)
}

async fn poll_events(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<PollQuery>,
) -> ApiResult<Json<EventPage>> {
    let s = lookup(&app, &id)?;
    let deadline = tokio::time::Instant::now() + Duration::from_millis(q.wait_ms.min(app.config.max_wait_ms));
    let mut rx = s.subscribe();
    loop {
        rx.borrow_and_update();
        let (p, ready) = page(&s, q.after);
        if ready || tokio::time::Instant::now() >= deadline {
            return Ok(Json(p));
        }
        if tokio::time::timeout_at(deadline, rx.changed()).await.is_err() {
            return Ok(Json(page(&s, q.after).0));
        }
    }
}

async fn cancel(State(app): State<Arc<App>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let s = lookup(&app, &id)?;
    let state = s.state();
    match state {
        SessionState::Running | SessionState::Cancelled => {
            s.cancel.store(true, Ordering::SeqCst);
            tracing::info!(session = %id, "cancel requested");
            Ok(Json(json!({ "state": s.state() })))
        }
        _ => Err(ApiError::Conflict(format!("cannot cancel a {state:?} session"))),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ResultQuery {
    format: Option<String>,
}

async fn result(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    Query(q): Query<ResultQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let s = lookup(&app, &id)?;
    let (state, completed, error) = {
        let d = s.data();
        (d.state, d.result.clone(), d.error.clone())
    };
    let completed = match (state, completed) {
        (SessionState::Done | SessionState::Cancelled, Some(c)) => c,
        (SessionState::Failed, _) => {
            return Err(ApiError::Conflict(format!(
                "run failed: {}",
                error.unwrap_or_default()
            )))
        }
        _ => return Err(ApiError::Conflict(format!("result not ready (session is {state:?})"))),
    };
    let wants_json = match q.format.as_deref() {
        Some("json" | "manifest") => true,
        Some("png") => false,
        Some(other) => return Err(ApiError::BadRequest(format!("unknown result format '{other}'"))),
        None => headers
            .get(header::ACCEPT)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.contains("application/json")),
    };
    if wants_json {
        Ok(Json(&completed.manifest).into_response())
    } else {
        Ok(([(header::CONTENT_TYPE, "image/png")], completed.png.clone()).into_response())
    }
}
