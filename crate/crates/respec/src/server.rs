//! JSON-over-HTTP review API.
//!
//! `GET /sessions`, `GET /sessions/{id}`, `POST /sessions/{id}/review` and
//! `GET /sessions/{id}/events` (server-sent events). Every response carries
//! the `x-respec-schema` header and every JSON body a `schema_version`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::stream::{self, Stream};
use respec_core::engine::{current_judgement, Engine, EngineError};
use respec_core::jml::{JmlSpecification, SpecStatus};
use respec_core::model::{CandidatePatch, MethodRef, PatchMode};
use respec_core::patch::AttemptRecord;
use respec_core::session::{
    Event, ReviewAction, ReviewDecision, ReviewSubject, Session, SessionState, StoreError, SCHEMA_VERSION,
};
use respec_core::spec::VerificationOutcome;
use respec_core::validate::{Judgement, PatchVerdict};
use serde::{Deserialize, Serialize};

pub const SCHEMA_HEADER: &str = "x-respec-schema";

pub struct AppState {
    pub engine: Arc<Engine>,
    /// Continue the pipeline in the background after a review.
    pub drive_after_review: bool,
    pub poll_interval: Duration,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub state: SessionState,
    pub needs_review: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_plausible: Option<PatchMode>,
    pub overfit_suspected: bool,
    pub event_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionList {
    pub schema_version: u32,
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SpecEntry {
    pub iteration: u32,
    pub text: String,
    pub status: SpecStatus,
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationOutcome>,
    /// True for reviewer replacements.
    pub edited: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidateView {
    pub patch: CandidatePatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<PatchVerdict>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionDetail {
    pub schema_version: u32,
    pub id: String,
    pub state: SessionState,
    pub report_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<MethodRef>,
    pub localization: Vec<MethodRef>,
    pub spec_history: Vec<SpecEntry>,
    pub candidates: Vec<CandidateView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current: Option<CandidatePatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_judgement: Option<Judgement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_log: Option<String>,
    pub attempts: Vec<AttemptRecord>,
    pub reviews: Vec<ReviewDecision>,
    pub events: Vec<Event>,
}

fn spec_entry(spec: &JmlSpecification, verification: Option<&VerificationOutcome>, edited: bool) -> SpecEntry {
    SpecEntry {
        iteration: spec.iteration,
        text: spec.text.clone(),
        status: spec.status,
        diagnostics: spec.diagnostics.iter().map(|d| d.to_string()).collect(),
        verification: verification.cloned(),
        edited,
    }
}

pub fn detail(s: &Session, events: Vec<Event>) -> SessionDetail {
    let d = &s.data;
    let mut spec_history = Vec::new();
    if let Some(r) = &d.refinement {
        for h in &r.history {
            spec_history.push(spec_entry(&h.spec, Some(&h.outcome), false));
        }
        if r.settled.is_none() || r.history.is_empty() {
            spec_history.push(spec_entry(&r.current, None, false));
        }
    } else if let Some(drafts) = &d.drafts {
        spec_history.push(spec_entry(&drafts.target, None, false));
    }
    for e in &d.spec_edits {
        spec_history.push(spec_entry(e, None, true));
    }
    let verdict_of = |id: &str| {
        d.patching
            .log
            .iter()
            .rev()
            .find(|r| r.patch_id.as_deref() == Some(id))
            .and_then(|r| r.verdict.clone())
            .or_else(|| {
                current_judgement(d)
                    .filter(|j| j.verdict.patch_id == id)
                    .map(|j| j.verdict.clone())
            })
    };
    SessionDetail {
        schema_version: SCHEMA_VERSION,
        id: s.id.clone(),
        state: s.state,
        report_text: d.case.report_text.clone(),
        category: d.category.map(|c| c.label().to_string()),
        target: d.target.clone(),
        localization: d.localization.clone(),
        spec_history,
        candidates: d
            .candidates
            .iter()
            .map(|p| CandidateView {
                verdict: verdict_of(&p.patch_id),
                patch: p.clone(),
            })
            .collect(),
        current: d.current.as_ref().map(|c| c.patch.clone()),
        current_judgement: current_judgement(d).cloned(),
        baseline_log: d.baseline.as_ref().map(|b| b.failure_logs()),
        attempts: d.patching.log.clone(),
        reviews: d.reviews.clone(),
        events,
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    schema_version: u32,
    error: String,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.0,
            Json(ErrorBody {
                schema_version: SCHEMA_VERSION,
                error: self.1,
            }),
        )
            .into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownSession(_) | EngineError::Store(StoreError::UnknownSession(_)) => StatusCode::NOT_FOUND,
            EngineError::WrongState { .. } => StatusCode::CONFLICT,
            EngineError::InvalidDecision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        EngineError::from(e).into()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Result<Json<SessionList>, ApiError> {
    let engine = app.engine.clone();
    blocking(move || {
        let store = engine.store();
        let mut sessions = Vec::new();
        for id in store.session_ids()? {
            let s = store.load_session(&id)?;
            let events = store.read_events(&id)?;
            sessions.push(SessionSummary {
                needs_review: s.state == SessionState::AwaitingReview,
                state: s.state,
                category: s.data.category.map(|c| c.label().to_string()),
                first_plausible: s.data.first_plausible,
                overfit_suspected: current_judgement(&s.data).is_some_and(|j| j.verdict.overfit_suspected),
                event_count: events.len(),
                updated_at: events.last().map(|e| e.at),
                id,
            });
        }
        Ok(Json(SessionList {
            schema_version: SCHEMA_VERSION,
            sessions,
        }))
    })
    .await
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionDetail>, ApiError> {
    let engine = app.engine.clone();
    blocking(move || {
        let s = engine.load(&id)?;
        let events = engine.store().read_events(&id)?;
        Ok(Json(detail(&s, events)))
    })
    .await
}

/// Body of `POST /sessions/{id}/review`. The session id comes from the
/// path; a mismatching `session_id` in the body is rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewRequest {
    #[serde(default)]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub session_id: Option<String>,
    pub subject: ReviewSubject,
    pub action: ReviewAction,
    #[serde(default)]
    pub text: Option<String>,
    pub reviewer: String,
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
}

async fn post_review(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ReviewRequest>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<SessionDetail>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    if req.schema_version.is_some_and(|v| v != SCHEMA_VERSION) {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "unsupported schema_version".into()));
    }
    if req.session_id.as_deref().is_some_and(|s| s != id) {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "session_id does not match the path".into()));
    }
    let decision = ReviewDecision {
        session_id: id.clone(),
        subject: req.subject,
        action: req.action,
        text: req.text,
        reviewer: req.reviewer,
        decided_at: req.decided_at.unwrap_or_else(Utc::now),
    };
    let engine = app.engine.clone();
    let out = blocking(move || {
        let s = engine.submit_review(decision)?;
        let events = engine.store().read_events(&s.id)?;
        Ok(Json(detail(&s, events)))
    })
    .await?;
    if app.drive_after_review && matches!(out.state, SessionState::PatchingMixed | SessionState::Validated) {
        let engine = app.engine.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = engine.drive(&id) {
                tracing::warn!(session = %id, "background drive failed: {e}");
            }
        });
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    /// Keep the stream open for new events until the session closes.
    #[serde(default = "yes")]
    pub follow: bool,
}

fn yes() -> bool {
    true
}

fn event_name(e: &Event) -> &'static str {
    use respec_core::session::EventKind::*;
    match e.kind {
        Created { .. } => "created",
        Transition { .. } => "transition",
        StageFailed { .. } => "stage_failed",
        Parked { .. } => "parked",
        Review { .. } => "review",
    }
}

async fn session_events(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let engine = app.engine.clone();
    let check = id.clone();
    blocking(move || engine.store().read_events(&check).map_err(ApiError::from)).await?;
    let engine = app.engine.clone();
    let interval = app.poll_interval;
    // state: (next index to send, finished)
    let stream = stream::unfold((0usize, false), move |(sent, done)| {
        let engine = engine.clone();
        let id = id.clone();
        let follow = q.follow;
        async move {
            if done {
                return None;
            }
            loop {
                let (eid, eng) = (id.clone(), engine.clone());
                let events = tokio::task::spawn_blocking(move || eng.store().read_events(&eid)).await.ok()?.ok()?;
                if let Some(e) = events.get(sent) {
                    let ev = SseEvent::default()
                        .event(event_name(e))
                        .id(e.seq.to_string())
                        .data(serde_json::to_string(e).expect("event serializes"));
                    return Some((Ok(ev), (sent + 1, false)));
                }
                let closed = events.iter().rev().find_map(|e| match &e.kind {
                    respec_core::session::EventKind::Transition { to, .. } => Some(to.is_closed()),
                    _ => None,
                });
                if !follow || closed == Some(true) {
                    return None;
                }
                tokio::time::sleep(interval).await;
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn schema_header(mut res: Response) -> Response {
    res.headers_mut()
        .insert(SCHEMA_HEADER, HeaderValue::from_str(&SCHEMA_VERSION.to_string()).expect("digits"));
    res
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/review", post(post_review))
        .route("/sessions/{id}/events", get(session_events))
        .layer(axum::middleware::map_response(schema_header))
        .with_state(app)
}

pub async fn serve(app: Arc<AppState>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
