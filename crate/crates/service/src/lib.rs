//! HTTP service and run management for BreachSeek.

pub mod api;
pub mod manager;

pub use api::{router, AppState};
pub use manager::{CreateRun, LimitOverrides, ManagerError, RunHandle, RunManager, RunSummary};

/// Serves the API on `0.0.0.0:port` until the process is stopped.
pub async fn serve(manager: std::sync::Arc<RunManager>, port: u16, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, auth = token.is_some(), "listening");
    axum::serve(listener, router(AppState { manager, token })).await
}
