//! `POST /query` and `GET /health` over a shared, immutable engine.

use std::future::Future;
use std::sync::{Arc, OnceLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;

use groundqa::{tokenize, Engine, PipelineError};

use crate::{QueryRequest, QueryResponse};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceOptions {
    pub k: usize,
    pub n: usize,
    pub report_timing: bool,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        ServiceOptions { k: groundqa::DEFAULT_K, n: groundqa::DEFAULT_N, report_timing: true }
    }
}

/// Engine slot filled once loading finishes. Until then every route
/// answers 503.
#[derive(Clone)]
pub struct AppState {
    engine: Arc<OnceLock<Arc<Engine>>>,
    options: ServiceOptions,
}

impl AppState {
    pub fn loading(options: ServiceOptions) -> Self {
        AppState { engine: Arc::new(OnceLock::new()), options }
    }

    pub fn ready(engine: Engine, options: ServiceOptions) -> Self {
        let state = Self::loading(options);
        state.install(engine);
        state
    }

    /// Returns false if an engine was already installed.
    pub fn install(&self, engine: Engine) -> bool {
        self.engine.set(Arc::new(engine)).is_ok()
    }

    pub fn is_ready(&self) -> bool {
        self.engine.get().is_some()
    }
}

fn error(status: StatusCode, reason: impl Into<String>) -> Response {
    (status, Json(json!({ "error": reason.into() }))).into_response()
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    entries: usize,
}

async fn health(State(state): State<AppState>) -> Response {
    match state.engine.get() {
        Some(e) => Json(Health { status: "ok", entries: e.kb.len() }).into_response(),
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({ "status": "loading" }))).into_response(),
    }
}

/// Parses and validates a request body into `(question, k, n)`.
pub fn parse_query(body: &[u8], defaults: ServiceOptions) -> Result<(String, usize, usize), String> {
    let req: QueryRequest = serde_json::from_slice(body).map_err(|e| format!("invalid JSON body: {e}"))?;
    let question = req.question.ok_or("missing field 'question'")?;
    if tokenize(&question).is_empty() {
        return Err("question has no word tokens".into());
    }
    let k = req.k.unwrap_or(defaults.k);
    let n = req.n.unwrap_or(defaults.n);
    if k == 0 {
        return Err("k must be at least 1".into());
    }
    if n == 0 {
        return Err("n must be at least 1".into());
    }
    Ok((question, k, n))
}

async fn query(State(state): State<AppState>, body: Bytes) -> Response {
    let Some(engine) = state.engine.get().cloned() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "index is still loading");
    };
    let (question, k, n) = match parse_query(&body, state.options) {
        Ok(q) => q,
        Err(reason) => return error(StatusCode::BAD_REQUEST, reason),
    };
    let timing = state.options.report_timing;
    let result = tokio::task::spawn_blocking(move || {
        engine.answer(&question, k, n).map(|a| QueryResponse::from_answer(&a, &engine.kb, timing))
    })
    .await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e @ (PipelineError::EmptyQuery | PipelineError::InvalidK | PipelineError::InvalidN))) => {
            error(StatusCode::BAD_REQUEST, e.to_string())
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new().route("/query", post(query)).route("/health", get(health)).with_state(state)
}

pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let d = ServiceOptions::default();
        assert_eq!(parse_query(br#"{"question":"What is acne?"}"#, d).unwrap(), ("What is acne?".into(), 32, 3));
        assert_eq!(parse_query(br#"{"question":"acne","k":4,"n":1}"#, d).unwrap().1, 4);
        for bad in [&b"not json"[..], br#"{}"#, br#"{"question":""}"#, br#"{"question":"?!"}"#, br#"{"question":"a","k":0}"#,
            br#"{"question":"a","n":0}"#, br#"{"question":"a","k":-1}"#, br#"{"question":7}"#, br#"[1]"#]
        {
            assert!(parse_query(bad, d).is_err(), "{}", String::from_utf8_lossy(bad));
        }
    }
}
