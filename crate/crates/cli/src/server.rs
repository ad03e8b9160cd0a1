//! HTTP service: recorded traces (read-only) and live sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use alchemy_core::baselines::{init_belief, BeliefError, BeliefState, DEFAULT_HYPOTHESIS_CAP};
use alchemy_core::interface::{
    list_trace_ids, load_bundle, valid_id, ActionRequest, Session, SessionError, SessionMode, SessionState,
    StepView, TraceIoError,
};
use alchemy_core::neural::Epn;
use alchemy_core::EnvConfig;

pub struct AppState {
    data_dir: PathBuf,
    env: EnvConfig,
    net: Option<Arc<Epn>>,
    prior: OnceLock<Result<BeliefState, BeliefError>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(data_dir: PathBuf, env: EnvConfig, net: Option<Arc<Epn>>) -> Arc<Self> {
        Arc::new(AppState {
            data_dir,
            env,
            net,
            prior: OnceLock::new(),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    fn prior(&self) -> Result<BeliefState, ApiError> {
        self.prior
            .get_or_init(|| init_belief(&self.env.gen, DEFAULT_HYPOTHESIS_CAP))
            .clone()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<TraceIoError> for ApiError {
    fn from(e: TraceIoError) -> Self {
        match e {
            TraceIoError::Io(ref io) if io.kind() == std::io::ErrorKind::NotFound => ApiError::not_found(e.to_string()),
            TraceIoError::BadId(_) => ApiError::not_found(e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::Finished => StatusCode::CONFLICT,
            SessionError::BadAction(_) | SessionError::NoPolicy(_) | SessionError::NoNetwork => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            SessionError::Env(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(format!("malformed request body: {e}")))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/traces", get(list_traces))
        .route("/api/traces/:id", get(get_trace))
        .route("/api/traces/:id/steps/:t", get(get_step))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/:id", get(get_session))
        .route("/api/sessions/:id/actions", post(post_action))
        .route("/api/sessions/:id/belief", get(get_belief))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceListing {
    pub id: String,
    pub seed: u64,
    pub agent: String,
    pub missing_edges: usize,
    pub score: i32,
    pub steps: usize,
}

async fn list_traces(State(st): State<Arc<AppState>>) -> ApiResult<Vec<TraceListing>> {
    let ids = match list_trace_ids(&st.data_dir) {
        Ok(ids) => ids,
        Err(TraceIoError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let b = load_bundle(&st.data_dir, &id)?;
        out.push(TraceListing {
            id,
            seed: b.trace.header.seed,
            agent: b.trace.header.agent.id.clone(),
            missing_edges: b.trace.header.missing_edges,
            score: b.trace.summary.score,
            steps: b.trace.steps.len(),
        });
    }
    Ok(Json(out))
}

async fn get_trace(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<serde_json::Value> {
    let b = load_bundle(&st.data_dir, &id)?;
    Ok(Json(json!({
        "id": b.id,
        "header": b.trace.header,
        "summary": b.trace.summary,
        "steps": b.trace.steps.len(),
        "actions": b.trace.steps.iter().map(|s| s.action_index).collect::<Vec<_>>(),
        "has_belief": b.belief.is_some(),
        "has_activations": b.activations.is_some(),
    })))
}

async fn get_step(State(st): State<Arc<AppState>>, Path((id, t)): Path<(String, String)>) -> ApiResult<StepView> {
    let b = load_bundle(&st.data_dir, &id)?;
    let t: usize = t.parse().map_err(|_| ApiError::not_found(format!("no step {t} in trace {id}")))?;
    StepView::from_trace(&b.trace, t, b.belief.as_deref())
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no step {t} in trace {id}")))
}

#[derive(Debug, Deserialize)]
struct CreateSession {
    seed: u64,
    mode: SessionMode,
    #[serde(default)]
    id: Option<String>,
}

async fn create_session(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let id = match req.id {
        Some(id) if !valid_id(&id) => return Err(ApiError::unprocessable(format!("invalid session id {id:?}"))),
        Some(id) => id,
        None => format!("s{}", st.next_id.fetch_add(1, Ordering::Relaxed)),
    };
    let st2 = Arc::clone(&st);
    let id2 = id.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<Session, ApiError> {
        let prior = st2.prior()?;
        Ok(Session::new(id2, req.seed, req.mode, &st2.env, prior, st2.net.clone())?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let state = session.state();
    {
        let mut map = st.sessions.write().expect("session map lock");
        if map.contains_key(&id) {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("session {id} already exists")));
        }
        map.insert(id, Arc::new(Mutex::new(session)));
    }
    Ok((StatusCode::CREATED, Json(state)).into_response())
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<SessionState> {
    let s = st.session(&id)?;
    let state = s.lock().expect("session lock").state();
    Ok(Json(state))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionBody {
    #[serde(default)]
    action: Option<usize>,
    #[serde(default)]
    auto: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ActionResponse {
    pub step: StepView,
    pub state: SessionState,
}

async fn post_action(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<ActionResponse> {
    let s = st.session(&id)?;
    let body: ActionBody = parse_body(&body)?;
    let req = match (body.action, body.auto) {
        (Some(i), false) => ActionRequest::Index(i),
        (None, true) => ActionRequest::Auto,
        _ => return Err(ApiError::unprocessable("give exactly one of \"action\" or \"auto\": true")),
    };
    tokio::task::spawn_blocking(move || {
        let mut s = s.lock().expect("session lock");
        s.step(req)?;
        let state = s.state();
        let step = state.last.clone().expect("a step was just taken");
        Ok(Json(ActionResponse { step, state }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn get_belief(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<alchemy_core::baselines::BeliefMarginals> {
    let s = st.session(&id)?;
    let m = tokio::task::spawn_blocking(move || s.lock().expect("session lock").belief_marginals())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(Json(m))
}
