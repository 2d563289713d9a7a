//! Studio service: sampling, colorization, interpolation and curation over HTTP.

pub mod api;
pub mod engine;
pub mod error;
pub mod registry;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;

pub use api::{router, AppState};
pub use error::{Result, StudioError};
pub use registry::Registry;
pub use store::Store;

/// Load models and session, then build the application state.
pub fn open(models_dir: &Path, session_dir: &Path) -> Result<AppState> {
    let models = Registry::load_dir(models_dir)?;
    if models.is_empty() {
        log::warn!("no checkpoints found in {}", models_dir.display());
    }
    let store = Store::open(session_dir)?;
    log::info!("session {} with {} images, {} models", store.session_id(), store.len(), models.len());
    Ok(AppState::new(models, store))
}

/// Serve until interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| StudioError::Internal(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| StudioError::Internal(e.to_string()))
}
