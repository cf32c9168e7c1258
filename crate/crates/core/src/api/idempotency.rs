use std::num::NonZeroUsize;
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Request, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};
use lru::LruCache;
use parking_lot::Mutex;

use super::{user_of, ApiError};

pub const IDEMPOTENCY_KEY: &str = "idempotency-key";
pub const REPLAY_HEADER: &str = "idempotent-replay";
const MAX_KEY_LEN: usize = 256;
const MAX_RESPONSE: usize = 64 << 20;

#[derive(Clone)]
struct Stored {
    status: StatusCode,
    headers: HeaderMap,
    body: Bytes,
}

type Slot = Arc<tokio::sync::Mutex<Option<Stored>>>;

/// Responses to writes that carried an idempotency key. A retried key
/// gets the first response back without the handler running again;
/// concurrent retries wait for the first to finish.
pub struct IdempotencyCache {
    slots: Mutex<LruCache<String, Slot>>,
}

impl IdempotencyCache {
    pub fn new(capacity: usize) -> Self {
        IdempotencyCache {
            slots: Mutex::new(LruCache::new(NonZeroUsize::new(capacity.max(1)).expect("nonzero"))),
        }
    }

    fn slot(&self, key: String) -> Slot {
        self.slots.lock().get_or_insert(key, Slot::default).clone()
    }
}

pub async fn layer(State(cache): State<Arc<IdempotencyCache>>, req: Request, next: Next) -> Response {
    let write = matches!(*req.method(), Method::POST | Method::PUT | Method::DELETE | Method::PATCH);
    let Some(key) = req.headers().get(IDEMPOTENCY_KEY).filter(|_| write) else {
        return next.run(req).await;
    };
    let key = match key.to_str() {
        Ok(k) if !k.is_empty() && k.len() <= MAX_KEY_LEN => k.to_owned(),
        _ => return ApiError::bad_request("InvalidIdempotencyKey", "key must be 1-256 visible characters").into_response(),
    };
    let scope = format!("{} {} {}\n{key}", req.method(), req.uri().path(), user_of(req.headers()));
    let slot = cache.slot(scope);
    let mut guard = slot.lock().await;
    if let Some(s) = guard.as_ref() {
        let mut resp = Response::new(Body::from(s.body.clone()));
        *resp.status_mut() = s.status;
        *resp.headers_mut() = s.headers.clone();
        resp.headers_mut().insert(REPLAY_HEADER, HeaderValue::from_static("true"));
        return resp;
    }
    let resp = next.run(req).await;
    if resp.status().is_server_error() {
        return resp;
    }
    let (parts, body) = resp.into_parts();
    let body = match to_bytes(body, MAX_RESPONSE).await {
        Ok(b) => b,
        Err(e) => return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "IoFailure", e.to_string()).into_response(),
    };
    *guard = Some(Stored {
        status: parts.status,
        headers: parts.headers.clone(),
        body: body.clone(),
    });
    Response::from_parts(parts, Body::from(body))
}
