//! JSON API over a shared [`Gateway`].

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::{build_gateway, ConfigError, Gateway, GatewayError, ServiceConfig};
use crate::policy::RedactionLevel;
use crate::postprocess::session_lines;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    level: Option<RedactionLevel>,
    rag: Option<bool>,
}

#[derive(Debug, Deserialize)]
struct PostMessage {
    text: String,
}

#[derive(Debug, Deserialize)]
struct AuditQuery {
    session: String,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[allow(clippy::result_large_err)]
fn parse_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, Response> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| error(StatusCode::BAD_REQUEST, e.to_string()))
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match self {
            GatewayError::NotFound => StatusCode::NOT_FOUND,
            GatewayError::Busy => StatusCode::CONFLICT,
            GatewayError::BackendUnavailable { .. } => StatusCode::SERVICE_UNAVAILABLE,
        };
        // the backend error text may echo a URL but never request content
        error(status, self.to_string())
    }
}

async fn create_session(State(gw): State<Arc<Gateway>>, body: Bytes) -> Response {
    let req: CreateSession = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let id = gw.create_session(req.level, req.rag);
    (StatusCode::CREATED, Json(json!({ "session_id": id }))).into_response()
}

async fn post_message(State(gw): State<Arc<Gateway>>, Path(id): Path<String>, body: Bytes) -> Response {
    let req: PostMessage = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let result = tokio::task::spawn_blocking(move || gw.handle_turn(&id, &req.text)).await;
    match result {
        Ok(Ok(out)) => Json(json!({
            "text": out.text,
            "disposition": out.disposition,
            "turn": out.turn,
        }))
        .into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "turn aborted"),
    }
}

async fn delete_session(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> Response {
    match gw.delete_session(&id) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn audit(State(gw): State<Arc<Gateway>>, Query(q): Query<AuditQuery>) -> Response {
    let result = tokio::task::spawn_blocking(move || session_lines(gw.audit_sink(), &q.session)).await;
    match result {
        Ok(Ok(lines)) => {
            let mut body = String::new();
            for line in lines {
                body.push_str(&line);
                body.push('\n');
            }
            ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
        }
        Ok(Err(e)) => error(StatusCode::SERVICE_UNAVAILABLE, format!("audit log unreadable: {e}")),
        Err(_) => error(StatusCode::INTERNAL_SERVER_ERROR, "audit read aborted"),
    }
}

async fn healthz(State(gw): State<Arc<Gateway>>) -> Response {
    Json(gw.health()).into_response()
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/:id/messages", post(post_message))
        .route("/v1/sessions/:id", delete(delete_session))
        .route("/v1/audit", get(audit))
        .route("/healthz", get(healthz))
        .with_state(gateway)
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Serves `gateway` on an already bound listener until `shutdown` resolves,
/// then flushes the audit sink.
pub async fn run(
    gateway: Arc<Gateway>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let result = axum::serve(listener, router(gateway.clone()))
        .with_graceful_shutdown(shutdown)
        .await;
    let gw = gateway.clone();
    let _ = tokio::task::spawn_blocking(move || gw.flush_audit()).await;
    result
}

/// Builds the gateway from `config` and serves until interrupted.
///
/// Must be called outside an async runtime: the HTTP backend client is
/// blocking and is created before the server runtime starts.
pub fn serve(config: &ServiceConfig) -> Result<(), ServeError> {
    let (gateway, warnings) = build_gateway(config)?;
    for w in &warnings {
        tracing::warn!("{w}");
    }
    let gateway = Arc::new(gateway);
    let addr = format!("{}:{}", config.address, config.port);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|source| ServeError::Bind {
                addr: addr.clone(),
                source,
            })?;
        let local: SocketAddr = listener.local_addr()?;
        tracing::info!(%local, "listening");
        run(gateway, listener, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
