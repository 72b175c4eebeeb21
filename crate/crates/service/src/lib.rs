//! Read-only HTTP front end for a [`TimelineIndex`].
//!
//! | route | body |
//! |---|---|
//! | `GET /surgeries` | surgery ids with extents |
//! | `GET /surgeries/{id}/timeline` | the three levels' segments of one surgery |
//! | `GET /search?phase=&task=&action=&surgery=&from=&to=&min_duration=` | matching segments |
//! | `GET /taxonomy` | label names and slugs per level |
//!
//! Everything else falls through to static files when a UI directory is
//! configured. Errors are JSON objects `{"error": kind, "message": text}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use esv_core::index::{IndexError, IndexHandle, IndexSegment, SearchQuery, SurgeryIndex};
use esv_core::{Level, TaxonomyRegistry};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: std::io::Error },
    #[error("static directory {0} does not exist")]
    MissingStaticDir(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone)]
struct AppState {
    index: IndexHandle,
    registry: Arc<TaxonomyRegistry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurgerySummary {
    pub surgery_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub duration_s: f64,
    pub samples: usize,
}

impl From<&SurgeryIndex> for SurgerySummary {
    fn from(s: &SurgeryIndex) -> Self {
        Self {
            surgery_id: s.surgery_id.clone(),
            start_s: s.start_s,
            end_s: s.end_s,
            duration_s: s.duration_s(),
            samples: s.samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub ordinal: usize,
    pub name: String,
    pub slug: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyListing {
    pub phase: Vec<LabelEntry>,
    pub task: Vec<LabelEntry>,
    pub action: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ErrorBody {
                error: kind.to_string(),
                message: message.into(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<IndexError> for ApiError {
    fn from(e: IndexError) -> Self {
        let kind = match e {
            IndexError::UnknownLabelName { .. } => "unknown_label",
            IndexError::EmptyQuery => "empty_query",
            _ => "invalid_query",
        };
        ApiError::new(StatusCode::BAD_REQUEST, kind, e.to_string())
    }
}

async fn list_surgeries(State(st): State<AppState>) -> Json<Vec<SurgerySummary>> {
    let index = st.index.current();
    Json(index.surgeries.iter().map(SurgerySummary::from).collect())
}

async fn surgery_timeline(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SurgeryIndex>, ApiError> {
    let index = st.index.current();
    index
        .surgery(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_surgery", format!("no surgery {id:?}")))
}

async fn search(
    State(st): State<AppState>,
    query: Result<Query<SearchQuery>, QueryRejection>,
) -> Result<Json<Vec<IndexSegment>>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", e.body_text()))?;
    let index = st.index.current();
    Ok(Json(index.search(&q, &st.registry)?))
}

async fn taxonomy(State(st): State<AppState>) -> Json<TaxonomyListing> {
    let entries = |level: Level| -> Vec<LabelEntry> {
        st.registry
            .enumerate(level)
            .iter()
            .zip(st.registry.slugs(level))
            .enumerate()
            .map(|(ordinal, (name, slug))| LabelEntry {
                ordinal,
                name: name.clone(),
                slug: slug.clone(),
            })
            .collect()
    };
    Json(TaxonomyListing {
        phase: entries(Level::Phase),
        task: entries(Level::Task),
        action: entries(Level::Action),
    })
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// Builds the router. `static_dir`, when given, serves the web UI bundle
/// for every path the API does not claim.
pub fn router(
    index: IndexHandle,
    registry: Arc<TaxonomyRegistry>,
    static_dir: Option<PathBuf>,
) -> Result<Router, ServiceError> {
    let api = Router::new()
        .route("/surgeries", get(list_surgeries))
        .route("/surgeries/{id}/timeline", get(surgery_timeline))
        .route("/search", get(search))
        .route("/taxonomy", get(taxonomy))
        .with_state(AppState { index, registry });
    Ok(match static_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(ServiceError::MissingStaticDir(dir));
            }
            api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => api.fallback(not_found),
    })
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| ServiceError::BindFailure {
        addr: addr.to_string(),
        source,
    })
}

/// A service running on a background task.
pub struct RunningService {
    pub addr: SocketAddr,
    shutdown: tokio::sync::oneshot::Sender<()>,
    task: tokio::task::JoinHandle<std::io::Result<()>>,
}

impl RunningService {
    pub async fn stop(self) -> Result<(), ServiceError> {
        let _ = self.shutdown.send(());
        self.task.await.map_err(std::io::Error::other)??;
        Ok(())
    }
}

/// Binds `addr` (port 0 picks a free port) and serves in the background.
pub async fn spawn(addr: &str, app: Router) -> Result<RunningService, ServiceError> {
    let listener = bind(addr).await?;
    let local = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(addr = %local, "serving");
    Ok(RunningService {
        addr: local,
        shutdown: tx,
        task,
    })
}

/// Serves until Ctrl-C.
pub async fn serve(addr: &str, app: Router) -> Result<(), ServiceError> {
    let listener = bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
