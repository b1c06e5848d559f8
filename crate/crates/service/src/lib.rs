//! HTTP service for survey ingestion, training and live localization.
//!
//! Sessions are plain directories under the data dir (see [`store`]). The
//! API is JSON over HTTP/1.1; `GET /api/v1/sessions/{id}/stream` pushes
//! estimate and accuracy events as server-sent events.

pub mod api;
pub mod store;

use std::future::Future;
use std::io;
use std::path::Path;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::watch;

pub use api::{router, AppState, ErrorBody};
pub use store::{SessionInfo, SessionState, SessionStore, StoreError, StreamEvent};

/// Builds the router over a store rooted at `data_dir`, plus the sender that
/// tells open streams to close.
pub fn app(data_dir: impl AsRef<Path>) -> io::Result<(axum::Router, watch::Sender<bool>)> {
    let store = Arc::new(SessionStore::open(data_dir)?);
    let (tx, rx) = watch::channel(false);
    Ok((router(AppState { store, shutdown: rx }), tx))
}

/// Serves until `signal` resolves, then stops accepting connections and lets
/// in-flight requests finish.
pub async fn serve<F>(listener: TcpListener, data_dir: impl AsRef<Path>, signal: F) -> io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let (router, stop) = app(data_dir)?;
    axum::serve(listener, router)
        .with_graceful_shutdown(async move {
            signal.await;
            let _ = stop.send(true);
        })
        .await
}
