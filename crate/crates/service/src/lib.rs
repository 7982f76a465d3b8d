//! HTTP telemetry service for estimated glucose readings.
//!
//! `POST /readings` appends one reading and answers `201 {"seq": n}` once the
//! line is on disk. `GET /readings?patient=&from=&to=` returns that patient's
//! readings in `[from, to]`, ordered by (timestamp, seq). `GET /health` reports
//! the record count.

mod api;
pub mod store;

use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use api::router;
pub use store::Store;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot open store {path}: {source}")]
    Store { path: PathBuf, source: std::io::Error },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server failed: {0}")]
    Serve(std::io::Error),
}

pub fn open_store(path: &Path) -> Result<Arc<Store>, ServiceError> {
    Store::open(path).map(Arc::new).map_err(|source| ServiceError::Store {
        path: path.to_path_buf(),
        source,
    })
}

/// Serves on an already bound listener until `shutdown` resolves.
/// In-flight requests, and so their appends, finish before this returns.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    store: Arc<Store>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router(store))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Serve)
}

pub async fn bind(addr: &str) -> Result<tokio::net::TcpListener, ServiceError> {
    tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })
}

/// Binds `addr`, opens the store and runs until ctrl-c.
pub async fn serve(addr: &str, store_path: &Path) -> Result<(), ServiceError> {
    let store = open_store(store_path)?;
    let listener = bind(addr).await?;
    let local: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(
        addr = ?local,
        store = %store_path.display(),
        records = store.len(),
        skipped = store.skipped(),
        "serving"
    );
    serve_on(listener, store, async {
        let _ = tokio::signal::ctrl_c().await;
        tracing::info!("shutting down");
    })
    .await
}
