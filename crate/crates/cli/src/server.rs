//! HTTP surface over one loaded scene memory.
//!
//! Every JSON body is canonical (sorted keys, compact). Errors share the tool
//! wire shape `{"ok":false,"error":{"code":..,"message":..}}`.

// Handlers short-circuit with ready-made responses.
#![allow(clippy::result_large_err)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use scenemem::agent::{run_query, AgentConfig, ModelClient};
use scenemem::tools::{canonical_json, ErrorCode, Registry, ToolError, ToolResult};
use serde::Deserialize;
use serde_json::json;

pub struct AppState {
    pub registry: Registry,
    /// Directory crop references resolve against.
    pub crops_root: Option<PathBuf>,
    pub client: Option<Arc<dyn ModelClient>>,
    pub agent: AgentConfig,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/tools/call", post(tools_call))
        .route("/components/{id}", get(component))
        .route("/components/{id}/crops/{n}", get(crop))
        .route("/query", post(query))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .method_not_allowed_fallback(|| async {
            error(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this route")
        })
        .with_state(state)
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::UnknownTool | ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict => StatusCode::CONFLICT,
        ErrorCode::IoError | ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = json!({ "ok": false, "error": { "code": code, "message": message.into() } });
    json_response(status, canonical_json(&body))
}

fn tool_error(e: ToolError) -> Response {
    let status = status_for(e.code);
    json_response(status, ToolResult::failure(None, e).to_json())
}

fn utf8(body: &Bytes) -> Result<&str, Response> {
    std::str::from_utf8(body).map_err(|e| error(StatusCode::BAD_REQUEST, "invalid_arguments", format!("body is not UTF-8: {e}")))
}

fn parse_id(raw: &str) -> Result<u64, Response> {
    raw.parse()
        .map_err(|_| error(StatusCode::BAD_REQUEST, "invalid_arguments", format!("`{raw}` is not a component id")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("worker failed: {e}")))
}

async fn healthz(State(s): State<Arc<AppState>>) -> Response {
    let count = s.registry.context().read().len();
    json_response(StatusCode::OK, canonical_json(&json!({ "ok": true, "component_count": count })))
}

async fn tools_call(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let text = match utf8(&body) {
        Ok(t) => t.to_string(),
        Err(r) => return r,
    };
    let result = match blocking(move || s.registry.dispatch_json(&text)).await {
        Ok(r) => r,
        Err(r) => return r,
    };
    let status = result.error.as_ref().map_or(StatusCode::OK, |e| status_for(e.code));
    json_response(status, result.to_json())
}

async fn component(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let id = match parse_id(&id) {
        Ok(id) => id,
        Err(r) => return r,
    };
    match s.registry.context().read().get(id) {
        Some(c) => json_response(StatusCode::OK, canonical_json(c)),
        None => tool_error(ToolError::new(ErrorCode::NotFound, format!("no component {id}"))),
    }
}

async fn crop(State(s): State<Arc<AppState>>, Path((id, n)): Path<(String, String)>) -> Response {
    let (id, n) = match (parse_id(&id), n.parse::<usize>()) {
        (Ok(id), Ok(n)) => (id, n),
        (Err(r), _) => return r,
        (_, Err(_)) => return error(StatusCode::BAD_REQUEST, "invalid_arguments", format!("`{n}` is not a crop index")),
    };
    let reference = {
        let memory = s.registry.context().read();
        let Some(c) = memory.get(id) else {
            return tool_error(ToolError::new(ErrorCode::NotFound, format!("no component {id}")));
        };
        match c.crop_refs.get(n) {
            Some(r) => r.clone(),
            None => {
                let msg = format!("component {id} has {} crops", c.crop_refs.len());
                return tool_error(ToolError::new(ErrorCode::NotFound, msg));
            }
        }
    };
    let path = s.crops_root.clone().unwrap_or_default().join(&reference);
    match tokio::fs::read(&path).await {
        Ok(bytes) => {
            let mime = if reference.ends_with(".png") { "image/png" } else { "application/octet-stream" };
            (StatusCode::OK, [(header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(e) => tool_error(ToolError::new(ErrorCode::IoError, format!("cannot read {reference}: {e}"))),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRequest {
    question: String,
}

async fn query(State(s): State<Arc<AppState>>, body: Bytes) -> Response {
    let text = match utf8(&body) {
        Ok(t) => t,
        Err(r) => return r,
    };
    let req: QueryRequest = match serde_json::from_str(text) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, "invalid_arguments", format!("malformed query: {e}")),
    };
    let Some(client) = s.client.clone() else {
        return error(
            StatusCode::SERVICE_UNAVAILABLE,
            "unavailable",
            "no model client configured; start the server with --scripted or --model",
        );
    };
    let outcome = match blocking(move || run_query(&req.question, &s.registry, client.as_ref(), &s.agent)).await {
        Ok(o) => o,
        Err(r) => return r,
    };
    let body = json!({
        "answer": outcome.answer.render(),
        "tags": outcome.answer.tags,
        "transcript": outcome.transcript,
    });
    json_response(StatusCode::OK, canonical_json(&body))
}
