//! Vendor and site plugin contracts and the records they exchange with the
//! gateway core.
//!
//! A *vendor* plugin knows the upstream device API: how to read a submission
//! payload, where the job id lives in the response, how to poll a job and
//! fetch calibration data. A *site* plugin knows the hosting site's policy
//! backend: it authorizes jobs, reports their lifecycle and builds result
//! URLs. Plugins hold no mutable per-request state and never touch gateway
//! state directly.

mod reference_site;
mod registry;

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use axum::http::{HeaderMap, StatusCode};
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use url::Url;

use crate::clock::{iso_ms, Timestamp};

pub use reference_site::{ReferenceSite, PLUGIN_NAME as REFERENCE_SITE};
pub use registry::{LoadedPlugins, PluginRegistry, SiteFactory, VendorFactory};

/// Identity of the authenticated caller, as established by the gateway.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub user_id: String,
    pub roles: BTreeSet<String>,
}

/// Facts parsed from a client job submission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSubmission {
    pub user_id: String,
    pub user_roles: BTreeSet<String>,
    pub project_hint: Option<String>,
    pub num_circuits: u32,
    pub shots: u32,
    pub job_type: String,
    /// The client request body, byte for byte.
    pub raw_payload: Bytes,
    pub received_at: Timestamp,
}

impl JobSubmission {
    /// `num_circuits * shots`, the quantity bounded by the fairness ledger.
    pub fn shot_units(&self) -> u64 {
        u64::from(self.num_circuits) * u64::from(self.shots)
    }
}

/// Outcome of forwarding a submission upstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmissionResult {
    /// Empty unless `upstream_status` is a success code.
    pub job_id: String,
    pub upstream_status: u16,
    pub raw_response: Bytes,
}

impl SubmissionResult {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.upstream_status)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Ready,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Ready | JobStatus::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobStatus::Pending => "pending",
            JobStatus::Running => "running",
            JobStatus::Ready => "ready",
            JobStatus::Failed => "failed",
        }
    }
}

/// Upstream view of a job. Terminal states always carry `qpu_time_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct JobStatusResult {
    pub job_id: String,
    pub status: JobStatus,
    pub qpu_time_ms: Option<u64>,
    /// Artifact name to bytes; only populated for ready jobs.
    pub artifacts: Option<BTreeMap<String, Bytes>>,
}

impl JobStatusResult {
    pub fn in_progress(job_id: impl Into<String>, status: JobStatus) -> Self {
        debug_assert!(!status.is_terminal());
        Self {
            job_id: job_id.into(),
            status,
            qpu_time_ms: None,
            artifacts: None,
        }
    }

    pub fn terminal(
        job_id: impl Into<String>,
        status: JobStatus,
        qpu_time_ms: u64,
        artifacts: Option<BTreeMap<String, Bytes>>,
    ) -> Self {
        debug_assert!(status.is_terminal());
        let artifacts = if status == JobStatus::Ready { artifacts } else { None };
        Self {
            job_id: job_id.into(),
            status,
            qpu_time_ms: Some(qpu_time_ms),
            artifacts,
        }
    }
}

/// Why a job was (or was not) admitted. Serialized names double as the
/// `error` field of gateway denial bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorizationReason {
    Approved,
    NoProject,
    ExclusiveReservation,
    BudgetExhausted,
    FairnessLimit,
}

impl AuthorizationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthorizationReason::Approved => "approved",
            AuthorizationReason::NoProject => "no_project",
            AuthorizationReason::ExclusiveReservation => "exclusive_reservation",
            AuthorizationReason::BudgetExhausted => "budget_exhausted",
            AuthorizationReason::FairnessLimit => "fairness_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobAuthorizationResult {
    pub allowed: bool,
    pub reason: AuthorizationReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_project: Option<String>,
    pub charge_budget: bool,
}

impl JobAuthorizationResult {
    pub fn approve(project: impl Into<String>, charge_budget: bool) -> Self {
        Self {
            allowed: true,
            reason: AuthorizationReason::Approved,
            resolved_project: Some(project.into()),
            charge_budget,
        }
    }

    pub fn deny(reason: AuthorizationReason) -> Self {
        debug_assert_ne!(reason, AuthorizationReason::Approved);
        Self {
            allowed: false,
            reason,
            resolved_project: None,
            charge_budget: false,
        }
    }

    /// `allowed <=> reason == approved`, and a project is present iff allowed.
    pub fn is_consistent(&self) -> bool {
        self.allowed == (self.reason == AuthorizationReason::Approved)
            && self.allowed == self.resolved_project.is_some()
    }
}

/// Calibration snapshot as served by the device. `raw` is the upstream body
/// and is what gets archived.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub timestamp: Timestamp,
    pub metrics: BTreeMap<String, f64>,
    pub raw: Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportPhase {
    Submitted,
    Completed,
}

/// Lifecycle event sent to the site backend.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobReport {
    pub job_id: String,
    pub phase: ReportPhase,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qpu_time_ms: Option<u64>,
    pub user_id: String,
    pub project_id: String,
    pub num_circuits: u32,
    pub shots: u32,
    pub charge_budget: bool,
    #[serde(with = "iso_ms")]
    pub submitted_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PluginError {
    #[error("malformed submission payload: {0}")]
    MalformedPayload(String),
    #[error("malformed upstream response: {0}")]
    MalformedResponse(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("upstream unavailable: {0}")]
    UpstreamUnavailable(String),
    #[error("site backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("site backend rejected request with status {status}: {detail}")]
    BackendRejected { status: u16, detail: String },
    #[error("unknown plugin {0:?}")]
    UnknownPlugin(String),
}

impl PluginError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            PluginError::UpstreamUnavailable(_) | PluginError::BackendUnavailable(_)
        )
    }
}

/// Which plugins to load and where they point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginConfig {
    pub vendor_plugin_name: String,
    pub site_plugin_name: String,
    pub vendor_base_url: Url,
    pub site_backend_url: Url,
    /// Credential the gateway presents upstream in place of the client's.
    pub vendor_token: String,
    /// Shared bearer for service-to-service calls into the site backend.
    pub site_backend_token: String,
    /// Public base of the artifact store, used for result URLs.
    pub store_public_url: Url,
}

impl PluginConfig {
    /// Reads `VENDOR_PLUGIN`, `SITE_PLUGIN`, `VENDOR_BASE_URL`,
    /// `SITE_BACKEND_URL`, `SERVICE_TOKEN`, `SITE_BACKEND_TOKEN` and
    /// `STORE_PUBLIC_URL`.
    pub fn from_env() -> Result<Self, crate::config::ConfigError> {
        use crate::config::{env_or, env_url};
        Ok(Self {
            vendor_plugin_name: env_or("VENDOR_PLUGIN", "mock"),
            site_plugin_name: env_or("SITE_PLUGIN", "reference-site"),
            vendor_base_url: env_url("VENDOR_BASE_URL", "http://127.0.0.1:8090/")?,
            site_backend_url: env_url("SITE_BACKEND_URL", "http://127.0.0.1:8091/")?,
            vendor_token: env_or("SERVICE_TOKEN", "service-token"),
            site_backend_token: env_or("SITE_BACKEND_TOKEN", "backend-token"),
            store_public_url: env_url("STORE_PUBLIC_URL", "http://127.0.0.1:8080/store/")?,
        })
    }
}

#[async_trait]
pub trait VendorPlugin: Send + Sync {
    fn name(&self) -> &str;

    /// Every upstream route the gateway knows about. Requests matching none
    /// of them are answered 404 without contacting the device.
    fn routes(&self) -> Vec<crate::gateway::RouteRule>;

    /// Extracts submission facts. `raw_payload` of the result is `body`.
    fn parse_submission(
        &self,
        caller: &Caller,
        job_type: &str,
        headers: &HeaderMap,
        body: Bytes,
        received_at: Timestamp,
    ) -> Result<JobSubmission, PluginError>;

    fn parse_submission_response(
        &self,
        status: StatusCode,
        body: Bytes,
    ) -> Result<SubmissionResult, PluginError>;

    /// Expected QPU time of a submission, used for the pre-submission budget
    /// check. Final charges use the time reported on completion.
    fn estimate_qpu_ms(&self, submission: &JobSubmission) -> u64;

    async fn poll_job(&self, job_id: &str) -> Result<JobStatusResult, PluginError>;

    async fn fetch_calibration(&self) -> Result<CalibrationReport, PluginError>;
}

#[async_trait]
pub trait SitePlugin: Send + Sync {
    fn name(&self) -> &str;

    /// Fail-closed: an unreachable backend is an error, never an approval.
    async fn authorize_job(
        &self,
        submission: &JobSubmission,
        estimated_cost_ms: u64,
    ) -> Result<JobAuthorizationResult, PluginError>;

    /// Idempotent per `(job_id, phase)` on the backend side.
    async fn report_job(&self, report: &JobReport) -> Result<(), PluginError>;

    fn result_url(&self, job_id: &str) -> Url;
}

/// `<store_base>/jobs/<job_id>/`
pub fn job_result_url(store_base: &Url, job_id: &str) -> Url {
    let mut url = store_base.clone();
    url.path_segments_mut()
        .expect("http url")
        .pop_if_empty()
        .push("jobs")
        .push(job_id)
        .push("");
    url
}
