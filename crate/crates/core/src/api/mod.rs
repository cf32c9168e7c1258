//! HTTP facade over [`Platform`].
//!
//! Bodies are JSON. Errors are `{"code": ..., "message": ...}` with the
//! module error name in `code`. The caller is identified by the trusted
//! `X-User` header; writes may carry `Idempotency-Key`.

mod error;
mod idempotency;
mod routes;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::http::HeaderMap;
use axum::Router;
use tokio::net::TcpListener;

pub use error::{status_for, ApiError, ErrorBody};
pub use idempotency::{IdempotencyCache, IDEMPOTENCY_KEY, REPLAY_HEADER};

use crate::platform::Platform;

pub const USER_HEADER: &str = "x-user";
pub const ANONYMOUS: &str = "anonymous";
const IDEMPOTENCY_CAPACITY: usize = 10_000;
const SWEEP_INTERVAL: Duration = Duration::from_millis(250);

pub(crate) fn user_of(headers: &HeaderMap) -> String {
    headers
        .get(USER_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .unwrap_or(ANONYMOUS)
        .to_owned()
}

#[derive(Clone)]
pub struct AppState {
    pub platform: Platform,
}

/// All routes, without the background stroke sweeper.
pub fn router(platform: Platform) -> Router {
    let idem = Arc::new(IdempotencyCache::new(IDEMPOTENCY_CAPACITY));
    routes::routes()
        .layer(axum::middleware::from_fn_with_state(idem, idempotency::layer))
        .with_state(AppState { platform })
}

/// Close idle boundary strokes periodically until the task is dropped.
pub fn spawn_stroke_sweeper(platform: Platform) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(SWEEP_INTERVAL);
        loop {
            tick.tick().await;
            let p = platform.clone();
            let closed = tokio::task::spawn_blocking(move || p.sweep_strokes(crate::now_millis()))
                .await
                .unwrap_or_default();
            if !closed.is_empty() {
                tracing::debug!("auto-finished {} stroke(s)", closed.len());
            }
        }
    })
}

/// Serve on `listener` until ctrl-c.
pub async fn serve(platform: Platform, listener: TcpListener) -> std::io::Result<()> {
    let sweeper = spawn_stroke_sweeper(platform.clone());
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    if let Some(a) = addr {
        tracing::info!("listening on http://{a}");
    }
    let result = axum::serve(listener, router(platform))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}
