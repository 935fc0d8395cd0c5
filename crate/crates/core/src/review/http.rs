use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{DecisionInput, ItemKind, ReviewError, ReviewStore};

pub const REVIEWER_HEADER: &str = "x-reviewer-id";

struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "message": self.2}))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let (status, code) = match &e {
            ReviewError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ReviewError::AlreadyDecided(_) | ReviewError::LeasedByOther { .. } | ReviewError::NotDecided(_) => {
                (StatusCode::CONFLICT, "conflict")
            }
            ReviewError::Checklist(_) | ReviewError::InvalidItem(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, code, e.to_string())
    }
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, "bad_request", message.into())
}

fn parse_kind(kind: Option<&str>) -> Result<ItemKind, ApiError> {
    kind.unwrap_or("instance").parse().map_err(bad_request)
}

/// The header wins over the query parameter.
fn reviewer(headers: &HeaderMap, fallback: Option<&str>) -> Result<String, ApiError> {
    headers
        .get(REVIEWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .or(fallback)
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(str::to_string)
        .ok_or_else(|| bad_request(format!("missing {REVIEWER_HEADER} header")))
}

fn blocking_failed(e: tokio::task::JoinError) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

#[derive(Deserialize)]
struct QueueQuery {
    kind: Option<String>,
    reviewer: Option<String>,
}

async fn queue(State(store): State<Arc<ReviewStore>>, headers: HeaderMap, Query(q): Query<QueueQuery>) -> Result<Response, ApiError> {
    let kind = parse_kind(q.kind.as_deref())?;
    let reviewer = reviewer(&headers, q.reviewer.as_deref())?;
    Ok(match store.next_pending(kind, &reviewer) {
        Some(item) => Json(item).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn item(State(store): State<Arc<ReviewStore>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let item = store.get(&id).ok_or(ReviewError::NotFound(id))?;
    let criteria = store.criteria().for_kind(item.kind).to_vec();
    Ok(Json(json!({"item": item, "criteria": criteria})).into_response())
}

async fn decision(
    State(store): State<Arc<ReviewStore>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<DecisionInput>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let reviewer = reviewer(&headers, None)?;
    let Json(input) = body.map_err(|e| bad_request(e.body_text()))?;
    let updated = tokio::task::spawn_blocking(move || store.submit_decision(&id, &reviewer, input))
        .await
        .map_err(blocking_failed)??;
    Ok(Json(updated).into_response())
}

#[derive(Deserialize)]
struct KindQuery {
    kind: Option<String>,
}

async fn export(State(store): State<Arc<ReviewStore>>, Query(q): Query<KindQuery>) -> Result<Response, ApiError> {
    let kind = parse_kind(q.kind.as_deref())?;
    let (n, body) = tokio::task::spawn_blocking(move || {
        let mut buf = Vec::new();
        store.export_accepted(kind, &mut buf).map(|n| (n, buf))
    })
    .await
    .map_err(blocking_failed)??;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson".to_string()), ("x-export-count".parse().expect("valid"), n.to_string())], body)
        .into_response())
}

async fn criteria(State(store): State<Arc<ReviewStore>>, Query(q): Query<KindQuery>) -> Result<Response, ApiError> {
    let kind = parse_kind(q.kind.as_deref())?;
    Ok(Json(store.criteria().for_kind(kind)).into_response())
}

async fn stats(State(store): State<Arc<ReviewStore>>) -> Json<super::ReviewStats> {
    Json(store.stats())
}

/// API routes, with the console bundle served from `static_dir` for every
/// other path.
pub fn router(store: Arc<ReviewStore>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/items/{id}", get(item))
        .route("/api/items/{id}/decision", post(decision))
        .route("/api/export", get(export))
        .route("/api/criteria", get(criteria))
        .route("/api/stats", get(stats))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serve until Ctrl-C.
pub async fn serve(store: Arc<ReviewStore>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review api listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
