//! Control service: starts episodes, streams their event logs and relays
//! human answers to waiting episodes.

use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use planweave_core::control::{
    AnswerAccepted, AnswerRequest, ArtifactBundle, EpisodeInfo, EpisodeState, ErrorBody, HitlRoute, QuestionView,
    StartEpisode,
};
use planweave_core::log::LogRecord;
use planweave_core::orchestrator::{default_episode_id, launch, LaunchRequest};
use serde_json::json;
use tokio::net::TcpListener;

mod registry;

pub use registry::Registry;

pub const DEFAULT_ADDR: &str = "127.0.0.1:8765";

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn unknown_episode(id: &str) -> Self {
        Self::NotFound(format!("unknown episode `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Conflict(_) => StatusCode::CONFLICT,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error("binding {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| match source.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(addr),
        _ => ServiceError::Bind { addr, source },
    })
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/episodes", get(list_episodes).post(start_episode))
        .route("/episodes/{id}", get(get_episode))
        .route("/episodes/{id}/events", get(events))
        .route("/episodes/{id}/questions", get(episode_questions))
        .route("/episodes/{id}/artifacts", get(artifacts))
        .route("/questions", get(all_questions))
        .route("/answers", post(answer))
        .with_state(registry)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    registry: Arc<Registry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    tracing::info!(addr = ?listener.local_addr().ok(), "control service listening");
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}

type Shared = State<Arc<Registry>>;

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_episodes(State(reg): Shared) -> Json<Vec<EpisodeInfo>> {
    Json(reg.episodes())
}

async fn get_episode(State(reg): Shared, Path(id): Path<String>) -> Result<Json<EpisodeInfo>, ApiError> {
    reg.episode(&id).map(Json)
}

async fn start_episode(
    State(reg): Shared,
    Json(req): Json<StartEpisode>,
) -> Result<(StatusCode, Json<EpisodeInfo>), ApiError> {
    if !req.run_path.is_file() {
        return Err(ApiError::BadRequest(format!("no run file at {}", req.run_path.display())));
    }
    let task = req
        .run_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    let info = EpisodeInfo {
        episode_id: String::new(),
        run_path: req.run_path.clone(),
        policy: req.policy.label().to_owned(),
        state: EpisodeState::Running,
        result: None,
        error: None,
        log_path: None,
    };
    let id = reg.register(req.episode_id.as_deref(), &default_episode_id(&task, &req.policy), info)?;
    let launch_req = LaunchRequest {
        run_path: req.run_path,
        policy: req.policy,
        backend: req.backend,
        out: reg.out().to_owned(),
        episode_id: Some(id.clone()),
    };
    let board = match req.hitl {
        HitlRoute::Console => Some(reg.board(&id)),
        HitlRoute::Default => None,
    };
    let worker = Arc::clone(&reg);
    let worker_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let stream_reg = Arc::clone(&worker);
        let stream_id = worker_id.clone();
        let mut observer = move |record: &LogRecord| stream_reg.push_line(&stream_id, record.to_line());
        let launched = launch(&launch_req, board, Some(&mut observer)).map_err(|e| e.to_string());
        worker.finish(&worker_id, launched);
    });
    Ok((StatusCode::CREATED, Json(reg.episode(&id)?)))
}

async fn events(State(reg): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let mut rx = reg.subscribe(&id)?;
    let stream = async_stream::stream! {
        let mut next = 0;
        loop {
            let (lines, done) = reg.lines_from(&id, next);
            next += lines.len();
            for line in lines {
                yield Ok::<_, Infallible>(format!("{line}\n"));
            }
            if done || rx.changed().await.is_err() {
                break;
            }
        }
    };
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], Body::from_stream(stream)).into_response())
}

async fn episode_questions(State(reg): Shared, Path(id): Path<String>) -> Result<Json<Vec<QuestionView>>, ApiError> {
    reg.questions(Some(&id)).map(Json)
}

async fn all_questions(State(reg): Shared) -> Result<Json<Vec<QuestionView>>, ApiError> {
    reg.questions(None).map(Json)
}

async fn answer(State(reg): Shared, Json(req): Json<AnswerRequest>) -> Result<Json<AnswerAccepted>, ApiError> {
    reg.answer(&req.episode_id, req.question_id, req.answer).map(Json)
}

async fn artifacts(State(reg): Shared, Path(id): Path<String>) -> Result<Json<ArtifactBundle>, ApiError> {
    reg.artifacts(&id).map(Json)
}
