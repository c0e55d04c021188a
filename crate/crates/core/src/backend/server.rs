//! Wire-protocol server around any [`Backend`]; `serve-mock` runs it with a mock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use super::{Backend, BackendError, ErrorBody, ScoreRequest, ScoreResponse};

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    /// Reported in the `model` field; defaults to the backend's name.
    pub model_name: Option<String>,
    /// Require `Authorization: Bearer <token>`.
    pub token: Option<String>,
    /// Answer this many score requests with 503 before serving, as a loading model would.
    pub loading_requests: usize,
}

struct AppState {
    backend: Arc<dyn Backend>,
    model: String,
    token: Option<String>,
    loading_left: AtomicUsize,
}

pub fn router(backend: Arc<dyn Backend>, options: ServerOptions) -> Router {
    let model = options
        .model_name
        .unwrap_or_else(|| backend.descriptor().name);
    let state = Arc::new(AppState {
        backend,
        model,
        token: options.token,
        loading_left: AtomicUsize::new(options.loading_requests),
    });
    Router::new()
        .route("/v1/score", post(score_handler))
        .route("/healthz", get(health_handler))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(
    listener: TcpListener,
    backend: Arc<dyn Backend>,
    options: ServerOptions,
) -> std::io::Result<()> {
    axum::serve(listener, router(backend, options)).await
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: message.into(),
        }),
    )
        .into_response()
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Response {
    if state.loading_left.load(Ordering::SeqCst) > 0 {
        return (StatusCode::SERVICE_UNAVAILABLE, "loading").into_response();
    }
    (StatusCode::OK, "ok").into_response()
}

async fn score_handler(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "missing or invalid bearer token");
        }
    }
    let loading = state
        .loading_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    if loading {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model is loading");
    }

    let req: ScoreRequest = match serde_json::from_slice(&body) {
        Ok(req) => req,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    if let Err(e) = req.validate() {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    match super::score(state.backend.as_ref(), &req).await {
        Ok(results) => Json(ScoreResponse {
            model: state.model.clone(),
            results,
        })
        .into_response(),
        Err(BackendError::InvalidRequest(msg)) => error(StatusCode::BAD_REQUEST, msg),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
