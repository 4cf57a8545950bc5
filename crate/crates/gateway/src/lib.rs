//! HTTP front end for the orchestrator.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | `POST` | `/sessions` | optional overrides `{provider_mode, backend}` | session metadata |
//! | `POST` | `/sessions/{id}/messages` | `{message, attachments?}` | SSE: `stage` events, then one `turn` |
//! | `GET` | `/sessions/{id}/transcript` | | the session transcript |
//! | `GET` | `/health` | | providers, backends, session count |
//!
//! Errors are JSON `{code, message}`. When an auth token is configured every
//! route except `/health` requires `Authorization: Bearer <token>`.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tokio_stream::wrappers::UnboundedReceiverStream;
use tokio_stream::StreamExt;

use genonet_core::orchestrator::{
    Attachment, Orchestrator, OrchestratorError, SessionMeta, SessionOverrides, SessionTranscript, StageEvent, Turn,
};

pub const AUTH_TOKEN_VAR: &str = "GENONET_AUTH_TOKEN";
pub const BIND_ADDR_VAR: &str = "GENONET_BIND_ADDR";
pub const DEFAULT_BIND_ADDR: &str = "127.0.0.1:8080";

#[derive(Clone)]
pub struct AppState {
    pub orchestrator: Arc<Orchestrator>,
    pub auth_token: Option<String>,
}

impl AppState {
    pub fn new(orchestrator: Arc<Orchestrator>) -> Self {
        Self {
            orchestrator,
            auth_token: None,
        }
    }

    pub fn with_auth_token(mut self, token: Option<String>) -> Self {
        self.auth_token = token.filter(|t| !t.is_empty());
        self
    }
}

/// `{code, message}` error body with its status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let status = match &e {
            OrchestratorError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            OrchestratorError::SessionExists(_) => StatusCode::CONFLICT,
            OrchestratorError::InvalidOverride(_) | OrchestratorError::EmptyMessage => StatusCode::BAD_REQUEST,
            OrchestratorError::PayloadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            OrchestratorError::Store(_) | OrchestratorError::TurnFailed(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MessageRequest {
    pub message: String,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendStatus {
    pub backend: String,
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub providers: Vec<String>,
    pub backends: Vec<BackendStatus>,
    pub sessions: usize,
}

pub fn router(state: AppState) -> Router {
    // Attachments are capped by the orchestrator, which answers with a
    // PayloadTooLarge body; the transport limit only has to let them through.
    let body_limit = state.orchestrator.config().max_attachment_bytes.saturating_mul(2) + (1 << 20);
    let protected = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(protected)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &state.auth_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    let orch = &state.orchestrator;
    Json(Health {
        status: "ok".into(),
        providers: orch.providers().iter().map(|p| p.to_string()).collect(),
        backends: orch
            .backends()
            .into_iter()
            .map(|(b, reason)| BackendStatus {
                backend: b.to_string(),
                available: reason.is_none(),
                reason,
            })
            .collect(),
        sessions: orch.session_ids().len(),
    })
}

async fn create_session(State(state): State<AppState>, body: Option<Json<serde_json::Value>>) -> Result<Json<SessionMeta>, ApiError> {
    let value = body.map(|Json(v)| v).unwrap_or(serde_json::Value::Null);
    let overrides = SessionOverrides::from_json(&value).map_err(ApiError::from)?;
    let orch = state.orchestrator.clone();
    let meta = tokio::task::spawn_blocking(move || orch.create_session(&overrides))
        .await
        .map_err(join_error)??;
    Ok(Json(meta))
}

async fn get_transcript(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionTranscript>, ApiError> {
    let orch = state.orchestrator.clone();
    // Waits behind an in-flight turn, so run it off the async workers.
    let transcript = tokio::task::spawn_blocking(move || orch.transcript(&id))
        .await
        .map_err(join_error)??;
    Ok(Json(transcript))
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())
}

enum Progress {
    Stage(StageEvent),
    Done(Result<Turn, OrchestratorError>),
}

fn sse_event(p: Progress) -> Event {
    let event = match p {
        Progress::Stage(e) => Event::default().event("stage").json_data(e),
        Progress::Done(Ok(turn)) => Event::default().event("turn").json_data(turn),
        Progress::Done(Err(OrchestratorError::TurnFailed(turn))) => Event::default().event("turn").json_data(*turn),
        Progress::Done(Err(e)) => Event::default().event("error").json_data(ApiError::from(e)),
    };
    event.unwrap_or_else(|e| Event::default().event("error").data(e.to_string()))
}

/// Runs one turn. Requests rejected before the turn starts get a plain JSON
/// error; otherwise the response streams `stage` events and ends with exactly
/// one `turn` event carrying the recorded turn.
async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> Result<Sse<impl tokio_stream::Stream<Item = Result<Event, Infallible>>>, ApiError> {
    state.orchestrator.session(&id)?;
    let (tx, mut rx) = mpsc::unbounded_channel();
    let orch = state.orchestrator.clone();
    tokio::task::spawn_blocking(move || {
        let stage_tx = tx.clone();
        let result = orch.handle_turn(&id, &req.message, &req.attachments, &mut |e| {
            let _ = stage_tx.send(Progress::Stage(e.clone()));
        });
        let _ = tx.send(Progress::Done(result));
    });
    let first = rx
        .recv()
        .await
        .ok_or_else(|| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", "turn worker stopped"))?;
    let first = match first {
        Progress::Done(Err(e)) if !matches!(e, OrchestratorError::TurnFailed(_)) => return Err(e.into()),
        p => p,
    };
    let stream = tokio_stream::once(first)
        .chain(UnboundedReceiverStream::new(rx))
        .map(|p| Ok(sse_event(p)));
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// One parsed server-sent event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SseMessage {
    pub event: String,
    pub data: String,
}

/// Splits an SSE body into events, skipping comments and keep-alives.
pub fn parse_sse(body: &str) -> Vec<SseMessage> {
    let mut out = Vec::new();
    for block in body.replace("\r\n", "\n").split("\n\n") {
        let mut event = String::from("message");
        let mut data: Vec<&str> = Vec::new();
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                event = v.trim_start().to_string();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push(v.strip_prefix(' ').unwrap_or(v));
            }
        }
        if !data.is_empty() {
            out.push(SseMessage {
                event,
                data: data.join("\n"),
            });
        }
    }
    out
}

/// Serves until ctrl-c.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
