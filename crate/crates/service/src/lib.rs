//! HTTP review service: the queue, decisions, cycle advance and reports of
//! persisted sessions, under `/api/v1`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use qeloop_core::orchestrator::{
    advance, OrchestratorError, Pipeline, RecommendationAction, ReviewDecision, SessionStatus,
};
use qeloop_core::reporting::{read_bundle, ReportBundle};
use qeloop_core::workspace::{Project, Session, SessionSnapshot, WorkspaceError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            WorkspaceError::WrongState(_) => (StatusCode::CONFLICT, "wrong_state"),
            WorkspaceError::Undecided(_) => (StatusCode::CONFLICT, "undecided_items"),
            WorkspaceError::AlreadyDecided(_) => (StatusCode::CONFLICT, "already_decided"),
            WorkspaceError::CycleOutOfRange { .. } => (StatusCode::RANGE_NOT_SATISFIABLE, "cycle_out_of_range"),
            WorkspaceError::Orchestrator(OrchestratorError::UnknownPairId(_)) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "unknown_pair_id")
            }
            WorkspaceError::Orchestrator(OrchestratorError::InvalidDecision { .. }) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision")
            }
            WorkspaceError::Orchestrator(OrchestratorError::ConflictingDecisions(_)) => {
                (StatusCode::CONFLICT, "conflicting_decisions")
            }
            WorkspaceError::Orchestrator(OrchestratorError::WrongState(_)) => (StatusCode::CONFLICT, "wrong_state"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %message, "request failed");
        }
        Self::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

/// One served session. Writers flip the status to Running before the
/// long-running part so that competing writers see a 409.
pub struct SessionHandle {
    pub project: Project,
    pub pipeline: Arc<Pipeline>,
    session: RwLock<Session>,
}

impl SessionHandle {
    pub fn new(project: Project, pipeline: Arc<Pipeline>, session: Session) -> Self {
        Self {
            project,
            pipeline,
            session: RwLock::new(session),
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        self.session.read().snapshot()
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<BTreeMap<String, Arc<SessionHandle>>>,
    token: Option<Arc<str>>,
    cors_origin: Option<String>,
}

impl AppState {
    pub fn new(handles: impl IntoIterator<Item = SessionHandle>) -> Self {
        let sessions = handles
            .into_iter()
            .map(|h| {
                let id = h.session.read().session_id.clone();
                (id, Arc::new(h))
            })
            .collect();
        Self {
            sessions: Arc::new(sessions),
            token: None,
            cors_origin: None,
        }
    }

    /// Requires `Authorization: Bearer <token>` on every request.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.map(Arc::from);
        self
    }

    pub fn with_cors_origin(mut self, origin: Option<String>) -> Self {
        self.cors_origin = origin;
        self
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions.get(id).cloned().ok_or_else(|| ApiError::unknown_session(id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub project_id: String,
    pub cycle: u32,
    pub status: SessionStatus,
    pub queue_len: usize,
}

/// A decision as posted by a reviewer; the server stamps the time when the
/// client leaves it out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionInput {
    pub pair_id: String,
    pub verdict: RecommendationAction,
    #[serde(default)]
    pub edited_text: Option<String>,
    pub reviewer: String,
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionsRequest {
    pub decisions: Vec<DecisionInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionsAccepted {
    pub accepted: usize,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct ReportQuery {
    pub cycle: Option<u32>,
}

async fn list_sessions(State(app): State<AppState>) -> Json<Vec<SessionInfo>> {
    let infos = app
        .sessions
        .values()
        .map(|h| {
            let s = h.session.read();
            SessionInfo {
                session_id: s.session_id.clone(),
                project_id: s.project_id.clone(),
                cycle: s.state.cycle,
                status: s.status(),
                queue_len: s.state.queue.len(),
            }
        })
        .collect();
    Json(infos)
}

async fn get_queue(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    Ok(Json(app.handle(&id)?.snapshot()))
}

async fn post_decisions(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<DecisionsRequest>, JsonRejection>,
) -> Result<Json<DecisionsAccepted>, ApiError> {
    let handle = app.handle(&id)?;
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let now = handle.pipeline.clock.now();
    let decisions: Vec<ReviewDecision> = body
        .decisions
        .into_iter()
        .map(|d| ReviewDecision {
            pair_id: d.pair_id,
            verdict: d.verdict,
            edited_text: d.edited_text,
            reviewer: d.reviewer,
            decided_at: d.decided_at.unwrap_or(now),
        })
        .collect();
    let mut session = handle.session.write();
    // Persist before publishing so a failed write leaves the session as it was.
    let mut next = session.clone();
    let accepted = next.submit(&decisions)?;
    handle.project.save_session(&next)?;
    *session = next;
    Ok(Json(DecisionsAccepted { accepted }))
}

async fn advance_cycle(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSnapshot>, ApiError> {
    let handle = app.handle(&id)?;
    let (mut state, decisions) = {
        let mut session = handle.session.write();
        session.begin_advance(&handle.project, handle.pipeline.clock.now())?;
        session.advance_input()
    };
    let worker = Arc::clone(&handle);
    let joined = tokio::task::spawn_blocking(move || {
        let result = advance(&mut state, &decisions, &worker.pipeline).map(|audit| (state, audit));
        let mut session = worker.session.write();
        session
            .finish_advance(&worker.project, &worker.pipeline, result)
            .map(|()| session.snapshot())
    })
    .await;
    match joined {
        Ok(result) => Ok(Json(result?)),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            format!("advance worker failed: {e}"),
        )),
    }
}

async fn get_reports(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Json<ReportBundle>, ApiError> {
    let handle = app.handle(&id)?;
    let cycle = {
        let session = handle.session.read();
        let cycle = q.cycle.unwrap_or(session.state.cycle);
        session.check_cycle(cycle)?;
        cycle
    };
    let bundle = read_bundle(&handle.project.dir, cycle).map_err(WorkspaceError::from)?;
    Ok(Json(bundle))
}

async fn require_token(State(app): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = app.token.as_deref() else {
        return next.run(req).await;
    };
    // Preflight requests carry no credentials.
    if req.method() == Method::OPTIONS {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token) {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

pub fn router(app: AppState) -> Router {
    let cors = app.cors_origin.as_deref().and_then(|o| match HeaderValue::from_str(o) {
        Ok(origin) => Some(
            CorsLayer::new()
                .allow_origin(origin)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]),
        ),
        Err(_) => {
            tracing::warn!(origin = o, "ignoring unparsable CORS origin");
            None
        }
    });
    let api = Router::new()
        .route("/api/v1/sessions", get(list_sessions))
        .route("/api/v1/sessions/{id}/queue", get(get_queue))
        .route("/api/v1/sessions/{id}/decisions", post(post_decisions))
        .route("/api/v1/sessions/{id}/advance", post(advance_cycle))
        .route("/api/v1/sessions/{id}/reports", get(get_reports))
        .layer(middleware::from_fn_with_state(app.clone(), require_token))
        .with_state(app);
    match cors {
        Some(layer) => api.layer(layer),
        None => api,
    }
}

/// Serves until ctrl-c.
pub async fn serve(app: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
