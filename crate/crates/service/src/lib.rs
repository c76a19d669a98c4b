//! HTTP run service: editing sessions, long-polled progress events, cancellation and
//! result download.

pub mod api;
pub mod app;
pub mod session;

use std::future::Future;

pub use api::{router, EventPage};
pub use app::{App, ServiceConfig};
pub use session::{RunRequest, SessionState};
use tokio::net::TcpListener;

/// Serves until `shutdown` resolves, then cancels running sessions and waits for their
/// partial results to be persisted.
pub async fn serve(
    listener: TcpListener,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = App::new(config)?;
    let addr = listener.local_addr()?;
    tracing::info!(%addr, workers = app.config.workers, "service listening");
    let stopping = app.clone();
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(async move {
            shutdown.await;
            tracing::info!("shutting down; cancelling running sessions");
            stopping.cancel_all();
        })
        .await?;
    app.drain().await;
    Ok(())
}

/// Resolves on SIGTERM or Ctrl-C.
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
