//! Registering a vendor plugin of your own. This one wraps the bundled mock
//! vendor and narrows its route table: only PIs and admins may submit, and
//! calibration reads are hidden entirely.
//!
//!     cargo run --example custom_plugin

use std::collections::BTreeSet;
use std::sync::Arc;

use async_trait::async_trait;
use axum::http::{HeaderMap, Method, StatusCode};
use bytes::Bytes;
use qpu_gatekeeper::accounting::{Actor, Membership, NewOrganisation, NewProject, NewUser, Role};
use qpu_gatekeeper::clock::Timestamp;
use qpu_gatekeeper::gateway::{RouteKind, RouteRule};
use qpu_gatekeeper::mock::{MockVendor, SubmissionPayload};
use qpu_gatekeeper::plugin::{
    CalibrationReport, Caller, JobStatusResult, JobSubmission, PluginConfig, PluginError,
    PluginRegistry, SubmissionResult, VendorPlugin,
};
use qpu_gatekeeper::stack::{Stack, StackConfig};

struct PiOnly(MockVendor);

#[async_trait]
impl VendorPlugin for PiOnly {
    fn name(&self) -> &str {
        "mock-pi-only"
    }

    fn routes(&self) -> Vec<RouteRule> {
        self.0
            .routes()
            .into_iter()
            .map(|mut rule| {
                if rule.kind == RouteKind::Submission {
                    rule.required_roles = ["admin", "pi"].map(String::from).into();
                }
                if rule.method == Method::GET && rule.path_pattern.starts_with("/calibration") {
                    rule.kind = RouteKind::Blocked;
                    rule.required_roles.clear();
                }
                rule
            })
            .collect()
    }

    fn parse_submission(
        &self,
        caller: &Caller,
        job_type: &str,
        headers: &HeaderMap,
        body: Bytes,
        received_at: Timestamp,
    ) -> Result<JobSubmission, PluginError> {
        self.0.parse_submission(caller, job_type, headers, body, received_at)
    }

    fn parse_submission_response(&self, status: StatusCode, body: Bytes) -> Result<SubmissionResult, PluginError> {
        self.0.parse_submission_response(status, body)
    }

    fn estimate_qpu_ms(&self, submission: &JobSubmission) -> u64 {
        self.0.estimate_qpu_ms(submission)
    }

    async fn poll_job(&self, job_id: &str) -> Result<JobStatusResult, PluginError> {
        self.0.poll_job(job_id).await
    }

    async fn fetch_calibration(&self) -> Result<CalibrationReport, PluginError> {
        self.0.fetch_calibration().await
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let mut registry = PluginRegistry::builtin();
    registry.register_vendor("mock-pi-only", |cfg: &PluginConfig| {
        Arc::new(PiOnly(MockVendor::new(cfg.vendor_base_url.clone(), cfg.vendor_token.clone())))
    });
    println!("vendors: {:?}", registry.vendor_names().collect::<Vec<_>>());

    let stack = Stack::start(StackConfig {
        registry,
        vendor_plugin: "mock-pi-only".into(),
        ..StackConfig::default()
    })
    .await?;

    let svc = Actor::Service;
    stack.accounting.create_org(&svc, NewOrganisation { org_id: Some("o".into()), name: "O".into(), yearly_budget_ms: 10_000_000 })?;
    stack.accounting.create_project(&svc, NewProject { project_id: Some("p".into()), org_id: "o".into(), name: "P".into(), budget_ms: 1_000_000 })?;
    for (id, role, pi) in [("pat", Role::Pi, true), ("sam", Role::Regular, false)] {
        stack.accounting.create_user(&svc, NewUser {
            user_id: Some(id.into()),
            username: id.into(),
            org_ids: BTreeSet::from(["o".to_string()]),
            role,
            password: None,
        })?;
        stack.accounting.add_member(&svc, "p", Membership { user_id: id.into(), pi })?;
    }

    let http = reqwest::Client::new();
    for user in ["pat", "sam"] {
        let token = stack.access_token(user)?;
        let submit = http
            .post(stack.edge_url().join("jobs/circuit/circuit")?)
            .bearer_auth(&token)
            .body(SubmissionPayload::new(1, 100, None).to_bytes())
            .send()
            .await?;
        let calibration = http.get(stack.edge_url().join("calibration/latest")?).bearer_auth(&token).send().await?;
        println!("{user}: submit {}  calibration {}", submit.status(), calibration.status());
    }

    stack.shutdown().await;
    Ok(())
}
