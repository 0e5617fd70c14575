//! HTTP surface of the mock device.
//!
//! Device endpoints: `POST /jobs/{type}/circuit`, `GET /jobs/{id}`,
//! `GET /calibration/latest`, `GET /health`. Admin endpoints:
//! `POST /calibration`, `POST /fault`, `POST /tick`. Fault modes apply to
//! device endpoints only; admin endpoints always answer.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::device::{FaultMode, MockDevice, RecordedRequest, SubmitError};
use super::schema::SubmitResponse;

pub fn router(device: Arc<MockDevice>) -> Router {
    let device_routes = Router::new()
        .route("/jobs/{job_type}/circuit", post(submit))
        .route("/jobs/{id}", get(status))
        .route("/calibration/latest", get(calibration_latest))
        .route("/health", get(health))
        .route_layer(middleware::from_fn_with_state(device.clone(), device_gate));
    let admin_routes = Router::new()
        .route("/calibration", post(calibration_set))
        .route("/fault", post(set_fault))
        .route("/tick", post(tick));
    device_routes
        .merge(admin_routes)
        .layer(middleware::from_fn_with_state(device.clone(), record))
        .with_state(device)
}

fn json_body(status: StatusCode, value: &impl serde::Serialize) -> Response {
    let body = serde_json::to_vec(value).expect("serializable body");
    (
        status,
        [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))],
        body,
    )
        .into_response()
}

fn error(status: StatusCode, msg: &str) -> Response {
    json_body(status, &serde_json::json!({ "error": msg }))
}

async fn record(State(device): State<Arc<MockDevice>>, req: Request, next: Next) -> Response {
    device.record_request(RecordedRequest {
        method: req.method().to_string(),
        path: req.uri().path().to_string(),
        authorization: req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string),
    });
    next.run(req).await
}

async fn device_gate(State(device): State<Arc<MockDevice>>, req: Request, next: Next) -> Response {
    let config = device.config();
    if let Some(token) = &config.service_token {
        let expected = format!("Bearer {token}");
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        if presented != Some(expected.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "unauthorized");
        }
    }
    match config.fault_mode {
        FaultMode::None => next.run(req).await,
        FaultMode::RejectAll => error(StatusCode::SERVICE_UNAVAILABLE, "device unavailable"),
        FaultMode::Slow => {
            tokio::time::sleep(Duration::from_millis(config.slow_delay_ms)).await;
            next.run(req).await
        }
        FaultMode::DropConnection => {
            let stream = futures::stream::once(async {
                Err::<Bytes, _>(std::io::Error::new(
                    std::io::ErrorKind::ConnectionReset,
                    "connection dropped by fault injection",
                ))
            });
            Response::builder()
                .status(StatusCode::OK)
                .body(Body::from_stream(stream))
                .expect("valid response")
        }
    }
}

async fn submit(
    State(device): State<Arc<MockDevice>>,
    Path(job_type): Path<String>,
    body: Bytes,
) -> Response {
    match device.submit(&job_type, &body) {
        Ok(id) => json_body(StatusCode::OK, &SubmitResponse { id }),
        Err(SubmitError::Malformed(msg)) => error(StatusCode::BAD_REQUEST, &msg),
    }
}

async fn status(State(device): State<Arc<MockDevice>>, Path(id): Path<String>) -> Response {
    match device.status(&id) {
        Some(view) => json_body(StatusCode::OK, &view),
        None => error(StatusCode::NOT_FOUND, "job not found"),
    }
}

async fn calibration_latest(State(device): State<Arc<MockDevice>>) -> Response {
    json_body(StatusCode::OK, &device.calibration_view())
}

async fn health(State(device): State<Arc<MockDevice>>) -> Response {
    json_body(
        StatusCode::OK,
        &serde_json::json!({ "status": "ok", "queue_length": device.queue_len() }),
    )
}

#[derive(Deserialize)]
struct CalibrationUpdate {
    metrics: BTreeMap<String, f64>,
}

async fn calibration_set(
    State(device): State<Arc<MockDevice>>,
    Json(update): Json<CalibrationUpdate>,
) -> Response {
    device.calibration_set(update.metrics);
    json_body(StatusCode::OK, &device.calibration_view())
}

#[derive(Deserialize)]
struct FaultUpdate {
    #[serde(default)]
    mode: Option<FaultMode>,
    #[serde(default)]
    fail_next: Option<u32>,
    #[serde(default)]
    delay_ms: Option<u64>,
}

async fn set_fault(
    State(device): State<Arc<MockDevice>>,
    Json(update): Json<FaultUpdate>,
) -> impl IntoResponse {
    if let Some(mode) = update.mode {
        device.set_fault_mode(mode);
    }
    if let Some(n) = update.fail_next {
        device.fail_next_jobs(n);
    }
    if let Some(ms) = update.delay_ms {
        device.set_slow_delay(Duration::from_millis(ms));
    }
    Json(serde_json::json!({ "mode": device.fault_mode() }))
}

#[derive(Deserialize, Default)]
struct TickRequest {
    #[serde(default)]
    count: Option<u32>,
}

async fn tick(State(device): State<Arc<MockDevice>>, body: Bytes) -> Response {
    let req: TickRequest = if body.is_empty() {
        TickRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return error(StatusCode::BAD_REQUEST, &e.to_string()),
        }
    };
    let completed: Vec<String> = (0..req.count.unwrap_or(1))
        .flat_map(|_| device.advance())
        .collect();
    json_body(StatusCode::OK, &serde_json::json!({ "completed": completed }))
}
