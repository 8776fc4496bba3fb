//! HTTP/JSON service for active-learning sessions answered by a person.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/healthz` | liveness, returns `ok` |
//! | GET | `/meta` | classes, strategies and schedules the bundle supports |
//! | POST | `/sessions` | create a session |
//! | GET | `/sessions/{id}/query` | the pending query (selects one if needed) |
//! | POST | `/sessions/{id}/label` | answer the pending query |
//! | GET | `/sessions/{id}/state` | curve, query log and sampler diagnostics |
//! | GET | `/console/` | static console assets, when configured |

pub mod api;
pub mod store;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use mcle_core::Dataset;
use tower_http::services::ServeDir;

pub use api::{
    ClassInfo, CreateRequest, CreateResponse, CurvePoint, LabelResponse, MetaResponse, ProjectedSample, QueryResponse,
    StateResponse,
};
pub use store::{SessionStore, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Where sessions are checkpointed; `None` keeps everything in memory
    /// and disables idle eviction.
    pub checkpoint_dir: Option<PathBuf>,
    pub max_sessions: usize,
    pub idle_timeout: Duration,
    /// Static console assets served under `/console/`.
    pub console_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            checkpoint_dir: None,
            max_sessions: 64,
            idle_timeout: Duration::from_secs(30 * 60),
            console_dir: None,
        }
    }
}

pub fn build_store(data: Arc<Dataset>, config: &ServiceConfig) -> Result<Arc<SessionStore>, StoreError> {
    let store = SessionStore::new(
        data,
        config.checkpoint_dir.clone(),
        config.max_sessions,
        config.idle_timeout,
    );
    let restored = store.load_checkpoints()?;
    if restored > 0 {
        log::info!("found {restored} checkpointed sessions");
    }
    Ok(Arc::new(store))
}

pub fn router(store: Arc<SessionStore>, console_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/healthz", get(api::healthz))
        .route("/meta", get(api::meta))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}/query", get(api::get_query))
        .route("/sessions/{id}/label", post(api::post_label))
        .route("/sessions/{id}/state", get(api::get_state))
        .with_state(store);
    match console_dir {
        Some(dir) => app.nest_service("/console", ServeDir::new(dir).append_index_html_on_directories(true)),
        None => app,
    }
}

/// Serves until `shutdown` resolves, evicting idle sessions in the
/// background, then checkpoints every live session.
pub async fn serve(
    listener: tokio::net::TcpListener,
    store: Arc<SessionStore>,
    config: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let sweeper = {
        let store = store.clone();
        let period = (store.idle_timeout() / 2).clamp(Duration::from_millis(50), Duration::from_secs(30));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let s = store.clone();
                let _ = tokio::task::spawn_blocking(move || s.evict_idle()).await;
            }
        })
    };
    let app = router(store.clone(), config.console_dir.clone());
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    sweeper.abort();
    match tokio::task::spawn_blocking(move || store.checkpoint_all()).await {
        Ok(Ok(n)) if n > 0 => log::info!("checkpointed {n} sessions"),
        Ok(Err(e)) => log::error!("checkpoint on shutdown failed: {e}"),
        _ => {}
    }
    result
}

/// Resolves on ctrl-c or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
