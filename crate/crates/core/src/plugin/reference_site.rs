use std::time::Duration;

use async_trait::async_trait;
use serde::Serialize;
use url::Url;

use super::{
    job_result_url, JobAuthorizationResult, JobReport, JobSubmission, PluginError, SitePlugin,
};
use crate::accounting::AuthoriseRequest;

pub const PLUGIN_NAME: &str = "reference-site";

/// Site plugin backed by the accounting service's `/jobAuthoriser` and
/// `/jobReporter` endpoints.
#[derive(Debug, Clone)]
pub struct ReferenceSite {
    backend: Url,
    token: String,
    store_public_url: Url,
    http: reqwest::Client,
}

impl ReferenceSite {
    pub fn new(backend: Url, token: impl Into<String>, store_public_url: Url) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("http client");
        Self {
            backend,
            token: token.into(),
            store_public_url,
            http,
        }
    }

    async fn post<T: Serialize>(
        &self,
        path: &str,
        body: &T,
    ) -> Result<reqwest::Response, PluginError> {
        let url = self
            .backend
            .join(path)
            .map_err(|e| PluginError::BackendUnavailable(e.to_string()))?;
        let resp = self
            .http
            .post(url)
            .bearer_auth(&self.token)
            .json(body)
            .send()
            .await
            .map_err(|e| PluginError::BackendUnavailable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(PluginError::BackendUnavailable(format!(
                "{path} answered {status}"
            )));
        }
        if !status.is_success() {
            let detail = resp.text().await.unwrap_or_default();
            return Err(PluginError::BackendRejected {
                status: status.as_u16(),
                detail,
            });
        }
        Ok(resp)
    }
}

#[async_trait]
impl SitePlugin for ReferenceSite {
    fn name(&self) -> &str {
        PLUGIN_NAME
    }

    async fn authorize_job(
        &self,
        submission: &JobSubmission,
        estimated_cost_ms: u64,
    ) -> Result<JobAuthorizationResult, PluginError> {
        let req = AuthoriseRequest {
            user_id: submission.user_id.clone(),
            project_hint: submission.project_hint.clone(),
            estimated_cost_ms,
            at: Some(submission.received_at),
        };
        let resp = self.post("jobAuthoriser", &req).await?;
        let verdict: JobAuthorizationResult = resp
            .json()
            .await
            .map_err(|e| PluginError::BackendUnavailable(format!("bad verdict body: {e}")))?;
        if !verdict.is_consistent() {
            return Err(PluginError::BackendUnavailable(format!(
                "inconsistent verdict {verdict:?}"
            )));
        }
        Ok(verdict)
    }

    async fn report_job(&self, report: &JobReport) -> Result<(), PluginError> {
        self.post("jobReporter", report).await.map(|_| ())
    }

    fn result_url(&self, job_id: &str) -> Url {
        job_result_url(&self.store_public_url, job_id)
    }
}
