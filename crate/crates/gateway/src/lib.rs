//! HTTP gateway: authentication, chunked uploads, reconstruction jobs,
//! reader studies and statistics over a JSON API.

pub mod api;
pub mod auth;
pub mod config;
pub mod error;
pub mod state;

use std::future::Future;
use std::net::SocketAddr;

pub use api::router;
pub use auth::{Role, TokenService, UserStore};
pub use config::GatewayConfig;
pub use error::{ApiError, ErrorEnvelope};
pub use state::AppState;

/// A bound listener plus the state it serves.
pub struct Server {
    listener: tokio::net::TcpListener,
    state: AppState,
}

impl Server {
    pub async fn bind(state: AppState) -> std::io::Result<Self> {
        let listener = tokio::net::TcpListener::bind(state.config.bind).await?;
        Ok(Self { listener, state })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    /// Serve until `shutdown` resolves. Starts the executor threads and a
    /// periodic purge of expired blobs and upload sessions.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let state = self.state.clone();
        state.start_workers();
        let purger = {
            let state = state.clone();
            let every = state.config.purge_interval;
            tokio::spawn(async move {
                let mut tick = tokio::time::interval(every);
                loop {
                    tick.tick().await;
                    let s = state.clone();
                    let n = tokio::task::spawn_blocking(move || s.purge()).await.unwrap_or(0);
                    if n > 0 {
                        tracing::info!(purged = n, "expired items removed");
                    }
                }
            })
        };
        tracing::info!(addr = %self.listener.local_addr()?, "gateway listening");
        let result = axum::serve(self.listener, router(state.clone()))
            .with_graceful_shutdown(shutdown)
            .await;
        purger.abort();
        tokio::task::spawn_blocking(move || state.stop_workers())
            .await
            .ok();
        result
    }
}
