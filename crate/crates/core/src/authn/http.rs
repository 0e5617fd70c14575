use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{Authn, TokenError};

#[derive(Deserialize)]
struct PasswordGrant {
    username: String,
    password: String,
}

#[derive(Deserialize)]
struct RefreshGrant {
    refresh_token: String,
}

fn reject(e: TokenError) -> Response {
    (StatusCode::UNAUTHORIZED, Json(json!({"error": e.code(), "detail": e.to_string()}))).into_response()
}

/// `POST /token` (password grant) and `POST /refresh`.
pub fn router(authn: Arc<Authn>) -> Router {
    Router::new()
        .route("/token", post(token))
        .route("/refresh", post(refresh))
        .with_state(authn)
}

async fn token(State(authn): State<Arc<Authn>>, Json(grant): Json<PasswordGrant>) -> Response {
    match authn.login(&grant.username, &grant.password) {
        Ok(pair) => Json(pair).into_response(),
        Err(e) => reject(e),
    }
}

async fn refresh(State(authn): State<Arc<Authn>>, Json(grant): Json<RefreshGrant>) -> Response {
    match authn.refresh(&grant.refresh_token) {
        Ok(pair) => Json(pair).into_response(),
        Err(e) => reject(e),
    }
}
