//! The QC gateway: a transparent reverse proxy in front of the device API.
//!
//! Every request is classified against the vendor's route table, the bearer
//! token is validated, and the caller's roles are checked. Passthrough
//! routes are relayed byte for byte with the gateway's service token in
//! place of the client's; submissions run the policy pipeline in
//! [`pipeline`] first.

mod active;
mod background;
mod metrics;
mod pipeline;
mod routes;

pub use active::{ActiveJobRow, ActiveJobs, Outcome, Progress};
pub use background::{Background, DeadLetter, RetryPolicy};
pub use metrics::{Metric, Metrics};
pub use routes::{RouteKind, RouteRule, RouteTable, RouteTableError};

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use bytes::Bytes;
use serde_json::json;
use url::Url;

use crate::authn::Authn;
use crate::clock::Clock;
use crate::config::{env_or, env_parse, env_url, ConfigError};
use crate::ledger::FairnessLedger;
use crate::plugin::{Caller, SitePlugin, VendorPlugin};
use crate::store::ArtifactStore;

pub const DEFAULT_MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

/// Collaborators shared by the gateway and the job reporter.
#[derive(Clone)]
pub struct Services {
    pub vendor: Arc<dyn VendorPlugin>,
    pub site: Arc<dyn SitePlugin>,
    pub ledger: FairnessLedger,
    pub store: Arc<dyn ArtifactStore>,
    pub active: Arc<ActiveJobs>,
    pub clock: Arc<dyn Clock>,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen_addr: String,
    pub upstream: Url,
    pub service_token: String,
    pub max_body_bytes: usize,
    pub retry: RetryPolicy,
    pub dead_letter_path: Option<PathBuf>,
}

impl GatewayConfig {
    pub fn new(upstream: Url, service_token: impl Into<String>) -> Self {
        Self {
            listen_addr: "127.0.0.1:8080".into(),
            upstream,
            service_token: service_token.into(),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            retry: RetryPolicy::default(),
            dead_letter_path: None,
        }
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        let mut config = Self::new(
            env_url("VENDOR_BASE_URL", "http://127.0.0.1:9000/")?,
            env_or("SERVICE_TOKEN", "service-token"),
        );
        config.listen_addr = env_or("LISTEN_ADDR", "127.0.0.1:8080");
        config.max_body_bytes = env_parse("MAX_BODY_BYTES", DEFAULT_MAX_BODY_BYTES)?;
        config.dead_letter_path = std::env::var_os("DEAD_LETTER_PATH").map(PathBuf::from);
        Ok(config)
    }
}

pub struct Gateway {
    services: Services,
    authn: Arc<Authn>,
    config: GatewayConfig,
    routes: RouteTable,
    http: reqwest::Client,
    background: Arc<Background>,
    metrics: Metrics,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("upstream", &self.config.upstream.as_str())
            .finish_non_exhaustive()
    }
}

const HOP_BY_HOP: [&str; 9] = [
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
    "proxy-connection",
];

fn is_hop_by_hop(name: &HeaderName) -> bool {
    HOP_BY_HOP.contains(&name.as_str())
}

pub(crate) fn error_body(status: StatusCode, error: &str, detail: impl std::fmt::Display) -> Response {
    (status, Json(json!({"error": error, "detail": detail.to_string()}))).into_response()
}

/// An upstream reply, kept raw so it can be relayed unchanged.
pub(crate) struct Upstream {
    pub status: StatusCode,
    pub headers: HeaderMap,
    pub body: Bytes,
}

impl Upstream {
    fn into_response(self) -> Response {
        let mut resp = Response::new(Body::from(self.body));
        *resp.status_mut() = self.status;
        let headers = resp.headers_mut();
        for (name, value) in &self.headers {
            if !is_hop_by_hop(name) && name != header::CONTENT_LENGTH {
                headers.append(name.clone(), value.clone());
            }
        }
        resp
    }
}

impl Gateway {
    pub fn new(services: Services, authn: Arc<Authn>, config: GatewayConfig) -> Result<Arc<Self>, RouteTableError> {
        let routes = RouteTable::new(services.vendor.routes())?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(60))
            .pool_max_idle_per_host(256)
            .build()
            .expect("http client");
        let background = Arc::new(Background::new(
            config.retry,
            services.clock.clone(),
            config.dead_letter_path.clone(),
        ));
        Ok(Arc::new(Self {
            services,
            authn,
            config,
            routes,
            http,
            background,
            metrics: Metrics::default(),
        }))
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn background(&self) -> &Arc<Background> {
        &self.background
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    /// Waits for post-submission uploads and reports to finish.
    pub async fn flush_background(&self) {
        self.background.flush().await;
    }

    /// Device routes at the root plus `/_gateway/health` and
    /// `/_gateway/metrics`.
    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route("/_gateway/health", get(|| async { Json(json!({"status": "ok"})) }))
            .route("/_gateway/metrics", get(metrics_handler))
            .fallback(handle)
            .with_state(self.clone())
    }

    fn authenticate(&self, headers: &HeaderMap) -> Result<Caller, Response> {
        let header = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        match self.authn.validate_bearer(header) {
            Ok(claims) => Ok(Caller {
                user_id: claims.sub,
                roles: claims.roles.into_iter().collect(),
            }),
            Err(e) => {
                self.metrics.incr(Metric::Unauthenticated);
                Err(error_body(StatusCode::UNAUTHORIZED, e.code(), e))
            }
        }
    }

    /// Sends a request upstream with the client's credentials replaced by
    /// the service token.
    pub(crate) async fn forward(
        &self,
        method: Method,
        path_and_query: &str,
        headers: &HeaderMap,
        body: Bytes,
    ) -> Result<Upstream, reqwest::Error> {
        let url = format!(
            "{}{}",
            self.config.upstream.as_str().trim_end_matches('/'),
            path_and_query
        );
        let mut out = HeaderMap::with_capacity(headers.len());
        for (name, value) in headers {
            if is_hop_by_hop(name)
                || name == header::AUTHORIZATION
                || name == header::HOST
                || name == header::CONTENT_LENGTH
            {
                continue;
            }
            out.append(name.clone(), value.clone());
        }
        let bearer = HeaderValue::from_str(&format!("Bearer {}", self.config.service_token))
            .expect("service token is a valid header value");
        out.insert(header::AUTHORIZATION, bearer);
        let resp = self
            .http
            .request(method, url)
            .headers(out)
            .body(body)
            .send()
            .await?;
        let status = resp.status();
        let headers = resp.headers().clone();
        let body = resp.bytes().await?;
        Ok(Upstream { status, headers, body })
    }
}

async fn metrics_handler(State(gw): State<Arc<Gateway>>) -> Response {
    let mut snapshot: serde_json::Map<String, serde_json::Value> = gw
        .metrics
        .snapshot()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into()))
        .collect();
    snapshot.insert("active_jobs".into(), gw.services.active.len().into());
    snapshot.insert("background_in_flight".into(), gw.background.in_flight().into());
    snapshot.insert("dead_letters_total".into(), gw.background.dead_letter_count().into());
    Json(snapshot).into_response()
}

async fn handle(State(gw): State<Arc<Gateway>>, req: Request) -> Response {
    gw.metrics.incr(Metric::Requests);
    let (parts, body) = req.into_parts();
    let path = parts.uri.path();
    let Some((rule, params)) = gw.routes.classify(&parts.method, path) else {
        gw.metrics.incr(Metric::NotFound);
        return error_body(StatusCode::NOT_FOUND, "not_found", format!("no route for {} {path}", parts.method));
    };
    let caller = match gw.authenticate(&parts.headers) {
        Ok(c) => c,
        Err(resp) => return resp,
    };
    if rule.kind == RouteKind::Blocked || !rule.allows(&caller.roles) {
        gw.metrics.incr(Metric::Forbidden);
        return error_body(StatusCode::FORBIDDEN, "forbidden", "route not permitted for this caller");
    }
    let body = match axum::body::to_bytes(body, gw.config.max_body_bytes).await {
        Ok(b) => b,
        Err(_) => {
            return error_body(
                StatusCode::PAYLOAD_TOO_LARGE,
                "payload_too_large",
                format!("body exceeds {} bytes", gw.config.max_body_bytes),
            )
        }
    };
    let path_and_query = parts
        .uri
        .path_and_query()
        .map(|p| p.as_str())
        .unwrap_or(path)
        .to_string();
    match rule.kind {
        RouteKind::Submission => {
            let job_type = params.get("type").cloned().unwrap_or_default();
            pipeline::submit(&gw, caller, &job_type, &path_and_query, &parts.headers, body).await
        }
        RouteKind::Passthrough => {
            gw.metrics.incr(Metric::Passthrough);
            match gw.forward(parts.method, &path_and_query, &parts.headers, body).await {
                Ok(up) => up.into_response(),
                Err(e) => {
                    gw.metrics.incr(Metric::UpstreamFailures);
                    error_body(StatusCode::BAD_GATEWAY, "upstream_unavailable", e)
                }
            }
        }
        RouteKind::Blocked => unreachable!("handled above"),
    }
}
