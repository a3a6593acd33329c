//! HTTP API over the output directory of a `process` run.
//!
//! | Method | Path                  | Purpose                                   |
//! |--------|-----------------------|-------------------------------------------|
//! | GET    | `/health`             | liveness                                  |
//! | GET    | `/api/scatter`        | seeded user sample plus a density grid    |
//! | GET    | `/api/users/{id}`     | profile, scores and cascade ids           |
//! | GET    | `/api/cascades/{id}`  | events with inferred parents              |
//! | POST   | `/api/annotations`    | append a label (204 once on disk)         |
//! | POST   | `/api/retrain`        | fine-tune on all labels, bump the version |
//!
//! Anything else is served from the optional UI directory.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use thiserror::Error;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub mod api;
pub mod state;

pub use state::{AppState, ServiceConfig};

use cascade_spotter_core::labeler::LabelError;
use cascade_spotter_core::pipeline::PipelineError;
use cascade_spotter_core::table::TableError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("no annotations to train on")]
    NoAnnotations,
    #[error("a retrain is already running")]
    RetrainInProgress,
    #[error("no model loaded")]
    NoModel,
    #[error("internal error: {0}")]
    Internal(String),
}

pub fn router(state: Arc<AppState>) -> Router {
    let ui = state.config.ui_dir.clone();
    let app = Router::new()
        .route("/health", get(api::health))
        .route("/api/scatter", get(api::scatter))
        .route("/api/users/{id}", get(api::user))
        .route("/api/cascades/{id}", get(api::cascade))
        .route("/api/annotations", post(api::annotate))
        .route("/api/retrain", post(api::retrain))
        .with_state(state);
    match ui {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Binds `addr`, failing fast if the port is taken.
pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

/// Serves until `shutdown` resolves, then drains open connections.
pub async fn serve<F>(listener: TcpListener, state: Arc<AppState>, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
