//! HTTP session API. Each session is an [`Engine`] behind its own mutex;
//! stage work runs on the blocking pool and every event is appended to the
//! session's log before the response is sent.

mod error;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use agentmark_core::orchestrator::{Backends, Engine, FileStore, OrchestratorError};
use agentmark_core::session::{Event, Intervention, SessionState};
use agentmark_core::{MetricsReport, PipelineConfig, PromptText};

pub use error::{ApiError, ErrorBody};

type Shared = Arc<Mutex<Engine>>;

/// Store, agents and the live sessions.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    store: FileStore,
    backends: Backends,
    sessions: RwLock<HashMap<String, Shared>>,
}

impl AppState {
    /// Opens the store and resumes every logged session. Logs that fail to
    /// replay are skipped with a warning.
    pub fn open(store: FileStore, backends: Backends) -> Result<Self, ApiError> {
        let mut sessions = HashMap::new();
        for id in store
            .list()
            .map_err(|e| ApiError::Internal(e.to_string()))?
        {
            let resumed = store
                .load(&id)
                .map_err(OrchestratorError::from)
                .and_then(|logged| {
                    let sink = store.reopen(&id)?;
                    Engine::resume(logged, backends.clone(), Some(Box::new(sink)))
                });
            match resumed {
                Ok(engine) => {
                    tracing::info!(session = %id, state = %engine.state(), "resumed");
                    sessions.insert(id, Arc::new(Mutex::new(engine)));
                }
                Err(e) => tracing::warn!(session = %id, "not resumed: {e}"),
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                store,
                backends,
                sessions: RwLock::new(sessions),
            }),
        })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.read_sessions().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn read_sessions(&self) -> std::sync::RwLockReadGuard<'_, HashMap<String, Shared>> {
        self.inner
            .sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
    }

    fn session(&self, id: &str) -> Result<Shared, ApiError> {
        self.read_sessions()
            .get(id)
            .cloned()
            .ok_or_else(|| OrchestratorError::UnknownSession(id.into()).into())
    }

    /// Runs `f` on the session's engine on the blocking pool.
    async fn with_engine<T, F>(&self, id: &str, f: F) -> Result<T, ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Engine, &FileStore) -> Result<T, ApiError> + Send + 'static,
    {
        let shared = self.session(id)?;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let mut engine = shared
                .lock()
                .map_err(|_| ApiError::Internal("session lock poisoned".into()))?;
            f(&mut engine, &state.inner.store)
        })
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/advance", post(advance))
        .route("/sessions/{id}/interventions", post(intervene))
        .route("/sessions/{id}/artifact", get(artifact))
        .route("/sessions/{id}/provenance", get(provenance))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/components/{file}", get(component_png))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub prompt: String,
    #[serde(default)]
    pub config: PipelineConfig,
    #[serde(default)]
    pub user: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub state: SessionState,
}

/// Session state and the events with `seq >= since`.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub state: SessionState,
    pub created_at: DateTime<Utc>,
    pub prompt: String,
    pub config: PipelineConfig,
    pub components: usize,
    pub artifact_ready: bool,
    pub next_seq: u64,
    pub events: Vec<Event>,
}

impl SessionView {
    fn of(e: &Engine, since: u64) -> Self {
        let r = e.record();
        Self {
            session_id: r.session_id().into(),
            state: r.state,
            created_at: r.header.created_at,
            prompt: r.header.prompt.text().into(),
            config: r.config().clone(),
            components: e.components().len(),
            artifact_ready: e.artifact().is_ok(),
            next_seq: r.next_seq(),
            events: r
                .events
                .iter()
                .filter(|ev| ev.seq >= since)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct Since {
    #[serde(default)]
    pub since: u64,
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body?;
    let prompt = PromptText::new(req.prompt).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let id = uuid::Uuid::new_v4().to_string();
    let user = req.user.unwrap_or_else(|| "anonymous".into());
    let st = state.clone();
    let engine_id = id.clone();
    let engine = tokio::task::spawn_blocking(move || -> Result<Engine, ApiError> {
        req.config
            .validate()
            .map_err(|e| OrchestratorError::InvalidConfig(e.0))?;
        let sink = st
            .inner
            .store
            .create(&engine_id)
            .map_err(OrchestratorError::from)?;
        let backends = st.inner.backends.clone();
        Ok(Engine::create(
            engine_id,
            prompt,
            req.config,
            &user,
            backends,
            Some(Box::new(sink)),
        )?)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let created = Created {
        session_id: id.clone(),
        state: engine.state(),
    };
    state
        .inner
        .sessions
        .write()
        .unwrap_or_else(|p| p.into_inner())
        .insert(id, Arc::new(Mutex::new(engine)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<Since>,
) -> Result<Json<SessionView>, ApiError> {
    let view = state
        .with_engine(&id, move |e, _| Ok(SessionView::of(e, q.since)))
        .await?;
    Ok(Json(view))
}

/// Persists the artifact the first time a session reaches Done.
fn persist_if_done(e: &Engine, store: &FileStore) -> Result<(), ApiError> {
    if let Ok(a) = e.artifact() {
        if !store.dir().join(format!("{}.ppm", a.session_id)).exists() {
            store.write_artifact(a).map_err(OrchestratorError::from)?;
        }
    }
    Ok(())
}

/// Runs the next stage; the response carries the events it produced.
async fn advance(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let view = state
        .with_engine(&id, |e, store| {
            let since = e.record().next_seq();
            e.advance()?;
            persist_if_done(e, store)?;
            Ok(SessionView::of(e, since))
        })
        .await?;
    Ok(Json(view))
}

async fn intervene(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<Intervention>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let Json(iv) = body?;
    let view = state
        .with_engine(&id, move |e, store| {
            let since = e.record().next_seq();
            e.intervene(iv)?;
            persist_if_done(e, store)?;
            Ok(SessionView::of(e, since))
        })
        .await?;
    Ok(Json(view))
}

async fn artifact(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let ppm = state
        .with_engine(&id, |e, _| Ok(e.artifact()?.ppm()))
        .await?;
    Ok(([(header::CONTENT_TYPE, "image/x-portable-pixmap")], ppm).into_response())
}

async fn provenance(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let json = state
        .with_engine(&id, |e, _| Ok(e.artifact()?.provenance.to_canonical_json()))
        .await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], json).into_response())
}

async fn metrics(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<MetricsReport>, ApiError> {
    Ok(Json(
        state
            .with_engine(&id, |e, _| Ok(e.metrics_report()?))
            .await?,
    ))
}

/// PNG of the n-th current component, in plan order.
async fn component_png(
    State(state): State<AppState>,
    Path((id, file)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let n: usize = file
        .strip_suffix(".png")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| ApiError::NotFound(format!("no component file {file:?}")))?;
    let png = state
        .with_engine(&id, move |e, _| {
            let c = e.components().get(n).ok_or_else(|| {
                ApiError::NotFound(format!("session has {} components", e.components().len()))
            })?;
            Ok(c.image().to_png())
        })
        .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
