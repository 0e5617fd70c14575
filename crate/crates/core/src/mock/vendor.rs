//! Vendor plugin speaking the mock device API.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use axum::http::{HeaderMap, StatusCode};
use bytes::Bytes;
use url::Url;

use super::device::{qpu_time_ms, DEFAULT_T_SHOT_MS};
use super::schema::{CalibrationView, JobView, SubmissionPayload, SubmitResponse};
use crate::clock::Timestamp;
use crate::gateway::{RouteKind, RouteRule};
use crate::plugin::{
    CalibrationReport, Caller, JobStatusResult, JobSubmission, PluginError, VendorPlugin,
};

pub const PLUGIN_NAME: &str = "mock";

#[derive(Debug, Clone)]
pub struct MockVendor {
    base_url: Url,
    token: String,
    t_shot_ms: f64,
    http: reqwest::Client,
}

impl MockVendor {
    pub fn new(base_url: Url, token: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        Self {
            base_url,
            token: token.into(),
            t_shot_ms: DEFAULT_T_SHOT_MS,
            http,
        }
    }

    pub fn with_t_shot_ms(mut self, t_shot_ms: f64) -> Self {
        self.t_shot_ms = t_shot_ms;
        self
    }

    fn endpoint(&self, path: &str) -> Url {
        self.base_url.join(path).expect("relative device path")
    }

    async fn get(&self, url: Url) -> Result<(StatusCode, Bytes), PluginError> {
        let resp = self
            .http
            .get(url)
            .bearer_auth(&self.token)
            .send()
            .await
            .map_err(|e| PluginError::UpstreamUnavailable(e.to_string()))?;
        let status = StatusCode::from_u16(resp.status().as_u16())
            .unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = resp
            .bytes()
            .await
            .map_err(|e| PluginError::UpstreamUnavailable(e.to_string()))?;
        Ok((status, body))
    }
}

#[async_trait]
impl VendorPlugin for MockVendor {
    fn name(&self) -> &str {
        PLUGIN_NAME
    }

    fn routes(&self) -> Vec<RouteRule> {
        use axum::http::Method;
        const USERS: &[&str] = &["admin", "org_manager", "pi", "regular"];
        vec![
            RouteRule::new(Method::POST, "/jobs/{type}/circuit", RouteKind::Submission, USERS),
            RouteRule::new(Method::GET, "/jobs/{id}", RouteKind::Passthrough, USERS),
            RouteRule::new(Method::GET, "/calibration/latest", RouteKind::Passthrough, USERS),
            RouteRule::new(Method::GET, "/health", RouteKind::Passthrough, USERS),
            RouteRule::new(Method::POST, "/calibration", RouteKind::Blocked, &[]),
            RouteRule::new(Method::POST, "/fault", RouteKind::Blocked, &[]),
            RouteRule::new(Method::POST, "/tick", RouteKind::Blocked, &[]),
        ]
    }

    fn parse_submission(
        &self,
        caller: &Caller,
        job_type: &str,
        _headers: &HeaderMap,
        body: Bytes,
        received_at: Timestamp,
    ) -> Result<JobSubmission, PluginError> {
        let payload = SubmissionPayload::parse(&body).map_err(PluginError::MalformedPayload)?;
        let num_circuits = u32::try_from(payload.circuits.len())
            .map_err(|_| PluginError::MalformedPayload("too many circuits".into()))?;
        Ok(JobSubmission {
            user_id: caller.user_id.clone(),
            user_roles: caller.roles.clone(),
            project_hint: payload.project().map(str::to_string),
            num_circuits,
            shots: payload.shots,
            job_type: job_type.to_string(),
            raw_payload: body,
            received_at,
        })
    }

    fn parse_submission_response(
        &self,
        status: StatusCode,
        body: Bytes,
    ) -> Result<crate::plugin::SubmissionResult, PluginError> {
        if !status.is_success() {
            return Ok(crate::plugin::SubmissionResult {
                job_id: String::new(),
                upstream_status: status.as_u16(),
                raw_response: body,
            });
        }
        let parsed: SubmitResponse = serde_json::from_slice(&body)
            .map_err(|e| PluginError::MalformedResponse(e.to_string()))?;
        if parsed.id.is_empty() {
            return Err(PluginError::MalformedResponse("empty job id".into()));
        }
        Ok(crate::plugin::SubmissionResult {
            job_id: parsed.id,
            upstream_status: status.as_u16(),
            raw_response: body,
        })
    }

    fn estimate_qpu_ms(&self, submission: &JobSubmission) -> u64 {
        qpu_time_ms(submission.num_circuits, submission.shots, self.t_shot_ms)
    }

    async fn poll_job(&self, job_id: &str) -> Result<JobStatusResult, PluginError> {
        let mut url = self.endpoint("jobs/");
        url.path_segments_mut()
            .map_err(|_| PluginError::UpstreamUnavailable("bad base url".into()))?
            .pop_if_empty()
            .push(job_id);
        let (status, body) = self.get(url).await?;
        if status == StatusCode::NOT_FOUND {
            return Err(PluginError::UnknownJob(job_id.to_string()));
        }
        if !status.is_success() {
            return Err(PluginError::UpstreamUnavailable(format!(
                "status {status} polling {job_id}"
            )));
        }
        let view: JobView = serde_json::from_slice(&body)
            .map_err(|e| PluginError::MalformedResponse(e.to_string()))?;
        if !view.status.is_terminal() {
            return Ok(JobStatusResult::in_progress(view.id, view.status));
        }
        let qpu = view.qpu_time_ms.ok_or_else(|| {
            PluginError::MalformedResponse(format!("terminal job {job_id} without qpu_time_ms"))
        })?;
        let mut artifacts = BTreeMap::new();
        artifacts.insert(
            "timeline".to_string(),
            Bytes::from(serde_json::to_vec(&view.timeline).expect("timeline serializes")),
        );
        artifacts.insert("results".to_string(), body);
        Ok(JobStatusResult::terminal(
            view.id,
            view.status,
            qpu,
            Some(artifacts),
        ))
    }

    async fn fetch_calibration(&self) -> Result<CalibrationReport, PluginError> {
        let (status, body) = self.get(self.endpoint("calibration/latest")).await?;
        if !status.is_success() {
            return Err(PluginError::UpstreamUnavailable(format!(
                "status {status} fetching calibration"
            )));
        }
        let view: CalibrationView = serde_json::from_slice(&body)
            .map_err(|e| PluginError::MalformedResponse(e.to_string()))?;
        Ok(CalibrationReport {
            timestamp: view.timestamp,
            metrics: view.metrics,
            raw: body,
        })
    }
}
