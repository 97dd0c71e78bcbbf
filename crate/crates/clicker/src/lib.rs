//! Live clicker-training sessions over HTTP. A session runs a push world
//! under a step clock (or, in batch mode, on explicit `step` calls); a
//! human watching it clicks to reward the action just taken, and after the
//! warmup episodes a completion model picks actions from a context of
//! clicked and unclicked tuples.
//!
//! Endpoints, all JSON:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | body: optional [`SessionConfig`]; returns `{id, snapshot}` |
//! | GET | `/sessions/{id}/state` | [`Snapshot`] |
//! | GET | `/sessions/{id}/events` | server-sent `snapshot` events, one per step and click |
//! | POST | `/sessions/{id}/click` | `{credited, snapshot}` |
//! | POST | `/sessions/{id}/pause`, `/resume`, `/reset` | [`Snapshot`] |
//! | POST | `/sessions/{id}/step` | batch mode only; [`Snapshot`] |
//!
//! Errors are `{error, field?}` with status 400 (bad config), 404 (unknown
//! session) or 409 (paused, done, wrong mode).

mod session;

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use gpm_core::models::{build_model, BuildContext, CompletionModel, RandomChoices};
use serde_json::json;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;

pub use session::{
    parse_action, ActionSource, Attribution, FieldError, HistorySummary, PendingStep, Phase, Plan, Session,
    SessionConfig, SessionError, Snapshot,
};

#[derive(Debug)]
pub enum ApiError {
    BadConfig(FieldError),
    NotFound,
    Conflict(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadConfig(e) => (StatusCode::BAD_REQUEST, json!({ "error": e.message, "field": e.field })),
            ApiError::NotFound => (StatusCode::NOT_FOUND, json!({ "error": "no such session" })),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, json!({ "error": m })),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError::Conflict(e.to_string())
    }
}

struct Handle {
    session: Mutex<Session>,
    model: Arc<dyn CompletionModel>,
    events: broadcast::Sender<Snapshot>,
    /// Serializes steps from the clock and the step endpoint.
    stepping: tokio::sync::Mutex<()>,
    clock: Mutex<Option<JoinHandle<()>>>,
}

impl Handle {
    fn snapshot(&self) -> Snapshot {
        self.session.lock().unwrap().snapshot()
    }

    fn publish(&self) -> Snapshot {
        let snap = self.snapshot();
        let _ = self.events.send(snap.clone());
        snap
    }

    fn stop_clock(&self) {
        if let Some(task) = self.clock.lock().unwrap().take() {
            task.abort();
        }
    }
}

/// Shared server state: the session table.
#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Handle>>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    fn get(&self, id: &str) -> Result<Arc<Handle>, ApiError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or(ApiError::NotFound)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/click", post(click))
        .route("/sessions/{id}/pause", post(pause))
        .route("/sessions/{id}/resume", post(resume))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/step", post(step))
        .with_state(state)
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
        SessionConfig::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::BadConfig(FieldError { field: "body".into(), message: e.to_string() }))?
    };
    config.validate().map_err(ApiError::BadConfig)?;
    let spec = config.model.clone();
    // Remote clients own a blocking HTTP client, which must not be built
    // on an async worker.
    let model = tokio::task::spawn_blocking(move || {
        let ctx = BuildContext {
            oracle_table: None,
            random_choices: Some(RandomChoices::Vectors { dims: 3, lo: 0, hi: 100 }),
        };
        build_model(&spec, ctx)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| ApiError::BadConfig(FieldError { field: "model".into(), message: e.to_string() }))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::new(id.clone(), config);
    let snapshot = session.snapshot();
    let handle = Arc::new(Handle {
        session: Mutex::new(session),
        model: Arc::from(model),
        events: broadcast::channel(64).0,
        stepping: tokio::sync::Mutex::new(()),
        clock: Mutex::new(None),
    });
    state.sessions.write().unwrap().insert(id.clone(), handle);
    log::info!("created session {id}");
    Ok((StatusCode::CREATED, Json(json!({ "id": id, "snapshot": snapshot }))))
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    Ok(Json(state.get(&id)?.snapshot()))
}

async fn events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = state.get(&id)?;
    let rx = handle.events.subscribe();
    let first = handle.snapshot();
    let stream = futures::stream::unfold((Some(first), rx), |(first, mut rx)| async move {
        let snap = match first {
            Some(s) => s,
            None => loop {
                match rx.recv().await {
                    Ok(s) => break s,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            },
        };
        let event = Event::default().event("snapshot").json_data(&snap).expect("snapshot serializes");
        Some((Ok(event), (None, rx)))
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn click(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let handle = state.get(&id)?;
    let credited = handle.session.lock().unwrap().click()?;
    let snapshot = handle.publish();
    Ok(Json(json!({ "credited": credited, "snapshot": snapshot })))
}

async fn pause(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    let handle = state.get(&id)?;
    handle.stop_clock();
    handle.session.lock().unwrap().pause();
    Ok(Json(handle.publish()))
}

fn start_clock(handle: &Arc<Handle>) {
    let (batch, period) = {
        let s = handle.session.lock().unwrap();
        (s.config.batch, Duration::from_millis(s.config.world.step_period_ms))
    };
    if batch {
        return;
    }
    let mut clock = handle.clock.lock().unwrap();
    if clock.as_ref().is_some_and(|t| !t.is_finished()) {
        return;
    }
    let weak = Arc::downgrade(handle);
    *clock = Some(tokio::spawn(async move {
        let mut ticks = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
        ticks.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            ticks.tick().await;
            let Some(handle) = weak.upgrade() else { return };
            match advance(&handle).await {
                Ok(_) | Err(ApiError::Conflict(_)) if handle.session.lock().unwrap().is_running() => {}
                _ => return,
            }
        }
    }));
}

async fn resume(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    let handle = state.get(&id)?;
    {
        let mut s = handle.session.lock().unwrap();
        if s.phase() == Phase::Done {
            return Err(SessionError::Done.into());
        }
        s.resume();
    }
    start_clock(&handle);
    Ok(Json(handle.publish()))
}

async fn reset(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    let handle = state.get(&id)?;
    handle.session.lock().unwrap().reset();
    start_clock(&handle);
    Ok(Json(handle.publish()))
}

async fn step(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Snapshot>, ApiError> {
    let handle = state.get(&id)?;
    if !handle.session.lock().unwrap().config.batch {
        return Err(ApiError::Conflict("step is only available in batch mode".into()));
    }
    Ok(Json(advance(&handle).await?))
}

/// Runs one step: plan under the lock, call the model without it, then
/// execute. A model call that errors or outlasts the timeout yields a
/// random action.
async fn advance(handle: &Arc<Handle>) -> Result<Snapshot, ApiError> {
    let _turn = handle.stepping.lock().await;
    let (pending, timeout) = {
        let mut s = handle.session.lock().unwrap();
        let pending = s.begin_step();
        (pending, Duration::from_millis(s.config.model_timeout_ms))
    };
    let pending = match pending {
        Ok(p) => p,
        Err(e) => {
            handle.publish();
            return Err(e.into());
        }
    };
    let completion = match &pending.plan {
        Plan::Random => None,
        Plan::Model(request) => {
            let (model, request) = (handle.model.clone(), request.clone());
            let call = tokio::task::spawn_blocking(move || model.complete(&request));
            match tokio::time::timeout(timeout, call).await {
                Ok(Ok(Ok(text))) => Some(text),
                Ok(Ok(Err(e))) => {
                    log::warn!("model call failed: {e}");
                    None
                }
                Ok(Err(e)) => {
                    log::warn!("model task failed: {e}");
                    None
                }
                Err(_) => {
                    log::warn!("model call timed out after {timeout:?}");
                    None
                }
            }
        }
    };
    handle.session.lock().unwrap().finish_step(pending, completion.as_deref())?;
    Ok(handle.publish())
}

fn distance(a: &[i64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).powi(2)).sum::<f64>().sqrt()
}

/// The scripted clicker used by tests and demos. Between two consecutive
/// snapshots of one episode it clicks if the object moved closer to the
/// goal (in the table plane), or, while the object stays put, if the
/// effector moved closer to the object.
pub fn auto_click(before: &Snapshot, after: &Snapshot) -> bool {
    if after.episode != before.episode || after.step != before.step + 1 {
        return false;
    }
    if after.object != before.object {
        let goal = &after.goal_center[..2];
        return distance(&after.object[..2], goal) < distance(&before.object[..2], goal);
    }
    let target: Vec<f64> = before.object.iter().map(|&v| v as f64).collect();
    distance(&after.effector, &target) < distance(&before.effector, &target)
}
