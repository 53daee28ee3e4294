//! HTTP control plane.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;

use breachseek_core::graph::{Event, RunId};
use breachseek_core::roles::ActionId;
use breachseek_core::store::{render_report, ReportFormat};
use breachseek_core::tools::ApprovalVerdict;

use crate::manager::{CreateRun, ManagerError, RunHandle, RunManager};

#[derive(Clone)]
pub struct AppState {
    pub manager: Arc<RunManager>,
    /// Bearer token required on every request; `None` disables authentication.
    pub token: Option<String>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ManagerError> for ApiError {
    fn from(e: ManagerError) -> Self {
        let status = match &e {
            ManagerError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ManagerError::NotFound(_) | ManagerError::UnknownAction(_) => StatusCode::NOT_FOUND,
            ManagerError::Conflict(_) => StatusCode::CONFLICT,
            ManagerError::Store(_) | ManagerError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{run_id}", get(get_run))
        .route("/runs/{run_id}/events", get(stream_events))
        .route("/runs/{run_id}/approvals/{action_id}", post(decide))
        .route("/runs/{run_id}/report", get(get_report))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or invalid bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

/// Runs blocking manager work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ManagerError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_run(State(state): State<AppState>, body: Option<Json<CreateRun>>) -> ApiResult<Response> {
    let Some(Json(req)) = body else {
        return Err(ApiError(StatusCode::BAD_REQUEST, "expected a JSON run request".into()));
    };
    let manager = state.manager.clone();
    let handle = blocking(move || manager.create(req)).await?;
    Ok((StatusCode::CREATED, Json(handle.summary())).into_response())
}

async fn list_runs(State(state): State<AppState>) -> Response {
    Json(state.manager.list()).into_response()
}

fn handle(state: &AppState, run_id: &str) -> ApiResult<Arc<RunHandle>> {
    Ok(state.manager.get(&RunId::from(run_id))?)
}

async fn get_run(State(state): State<AppState>, Path(run_id): Path<String>) -> ApiResult<Response> {
    Ok(Json(handle(&state, &run_id)?.summary()).into_response())
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from_seq: Option<u64>,
}

fn sse_event(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(e.kind().as_str())
        .data(serde_json::to_string(e).expect("events serialize"))
}

/// Streams events from `from_seq` (or after `Last-Event-ID`) and closes once the
/// run's log is complete.
async fn stream_events(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let handle = handle(&state, &run_id)?;
    let resume_after = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    let next_seq = query.from_seq.or(resume_after.map(|s| s + 1)).unwrap_or(1).max(1);
    let rx = handle.subscribe();
    let stream = stream::unfold(
        (handle, rx, next_seq, false),
        |(handle, mut rx, next_seq, done)| async move {
            if done {
                return None;
            }
            loop {
                rx.borrow_and_update();
                let events = handle.events_from(next_seq);
                if !events.is_empty() {
                    let next = events.last().map_or(next_seq, |e| e.seq + 1);
                    let items: Vec<Result<SseEvent, Infallible>> = events.iter().map(|e| Ok(sse_event(e))).collect();
                    let finished = handle.finished() && handle.events_from(next).is_empty();
                    return Some((stream::iter(items), (handle, rx, next, finished)));
                }
                if handle.finished() {
                    return None;
                }
                if rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    use futures::StreamExt;
    Ok(Sse::new(stream.flatten()).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    verdict: ApprovalVerdict,
    actor: String,
}

async fn decide(
    State(state): State<AppState>,
    Path((run_id, action_id)): Path<(String, String)>,
    body: Option<Json<DecisionBody>>,
) -> ApiResult<Response> {
    let Some(Json(body)) = body else {
        return Err(ApiError(
            StatusCode::BAD_REQUEST,
            "expected {\"verdict\": \"approve\"|\"reject\", \"actor\": ...}".into(),
        ));
    };
    let manager = state.manager.clone();
    let handle = blocking(move || {
        manager.decide(
            &RunId::from(run_id.as_str()),
            &ActionId::new(action_id),
            body.verdict,
            &body.actor,
        )
    })
    .await?;
    Ok(Json(handle.summary()).into_response())
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

async fn get_report(
    State(state): State<AppState>,
    Path(run_id): Path<String>,
    Query(query): Query<ReportQuery>,
) -> ApiResult<Response> {
    let format: ReportFormat = query
        .format
        .as_deref()
        .unwrap_or("md")
        .parse()
        .map_err(|e: String| ApiError(StatusCode::BAD_REQUEST, e))?;
    let handle = handle(&state, &run_id)?;
    let report = handle.report().ok_or_else(|| {
        ApiError(
            StatusCode::CONFLICT,
            format!("run {run_id} is {} and has no report yet", handle.status()),
        )
    })?;
    let body = render_report(&report, format);
    let manager = state.manager.clone();
    let id = RunId::from(run_id.as_str());
    let content = body.clone();
    blocking(move || {
        manager
            .store()
            .write_report(&id, format, &content)
            .map_err(ManagerError::from)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, format.content_type())], body).into_response())
}
