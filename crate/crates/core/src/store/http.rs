//! Object-store HTTP service: serves artifacts publicly and accepts writes
//! from holders of the write token. [`super::BucketStore`] is its client.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};

use super::{ArtifactKey, ArtifactKind, ArtifactStore, StoreError};

#[derive(Clone)]
struct StoreState {
    store: Arc<dyn ArtifactStore>,
    write_token: Option<String>,
}

/// `GET /jobs/{id}/`, `GET|PUT /jobs/{id}/{kind}.json`. Writes are refused
/// unless `write_token` is set and presented as a bearer token.
pub fn router(store: Arc<dyn ArtifactStore>, write_token: Option<String>) -> Router {
    Router::new()
        .route("/jobs/{job_id}/", get(list))
        .route("/jobs/{job_id}", get(list))
        .route("/jobs/{job_id}/{file}", get(fetch).put(upload))
        .with_state(StoreState { store, write_token })
}

pub(super) fn status_for(err: &StoreError) -> StatusCode {
    match err {
        StoreError::NotFound(_) => StatusCode::NOT_FOUND,
        StoreError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        StoreError::Conflict(_) => StatusCode::CONFLICT,
        StoreError::Empty | StoreError::InvalidKey(_) => StatusCode::BAD_REQUEST,
    }
}

fn error(err: StoreError) -> Response {
    (
        status_for(&err),
        Json(serde_json::json!({ "error": err.to_string() })),
    )
        .into_response()
}

fn key_from(job_id: String, file: &str) -> Result<ArtifactKey, StoreError> {
    let kind = ArtifactKind::from_file_name(file)
        .ok_or_else(|| StoreError::NotFound(format!("jobs/{job_id}/{file}")))?;
    ArtifactKey::new(job_id, kind)
}

async fn list(State(st): State<StoreState>, Path(job_id): Path<String>) -> Response {
    match st.store.list(&job_id).await {
        Ok(kinds) => Json(serde_json::json!({
            "job_id": job_id,
            "artifacts": kinds
                .iter()
                .map(|k| k.file_name())
                .collect::<Vec<_>>(),
        }))
        .into_response(),
        Err(e) => error(e),
    }
}

async fn fetch(State(st): State<StoreState>, Path((job_id, file)): Path<(String, String)>) -> Response {
    let key = match key_from(job_id, &file) {
        Ok(k) => k,
        Err(e) => return error(e),
    };
    match st.store.get(&key).await {
        Ok(bytes) => (
            [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
            bytes,
        )
            .into_response(),
        Err(e) => error(e),
    }
}

async fn upload(
    State(st): State<StoreState>,
    Path((job_id, file)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let authorized = match &st.write_token {
        Some(token) => headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            == Some(token.as_str()),
        None => false,
    };
    if !authorized {
        return (StatusCode::FORBIDDEN, Json(serde_json::json!({"error": "read-only"})))
            .into_response();
    }
    let key = match key_from(job_id, &file) {
        Ok(k) => k,
        Err(e) => return error(e),
    };
    match st.store.put(&key, body).await {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(e),
    }
}
