use std::collections::BTreeSet;
use std::time::Duration;

use async_trait::async_trait;
use bytes::Bytes;
use reqwest::StatusCode;
use serde::Deserialize;
use url::Url;

use super::{artifact_url, validate_job_id, ArtifactKey, ArtifactKind, ArtifactStore, StoreError};

/// Client for an external object store exposing path-style
/// `PUT/GET <endpoint>/jobs/<id>/<kind>.json`.
#[derive(Debug, Clone)]
pub struct BucketStore {
    endpoint: Url,
    public_base: Url,
    token: String,
    http: reqwest::Client,
}

#[derive(Deserialize)]
struct Listing {
    artifacts: Vec<String>,
}

impl BucketStore {
    pub fn new(endpoint: Url, public_base: Url, token: impl Into<String>) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        Self {
            endpoint,
            public_base,
            token: token.into(),
            http,
        }
    }

    fn unavailable(e: reqwest::Error) -> StoreError {
        StoreError::Unavailable(e.to_string())
    }

    async fn error_from(key: String, resp: reqwest::Response) -> StoreError {
        let status = resp.status();
        let detail = resp.text().await.unwrap_or_default();
        match status {
            StatusCode::NOT_FOUND => StoreError::NotFound(key),
            StatusCode::CONFLICT => StoreError::Conflict(key),
            StatusCode::BAD_REQUEST => StoreError::InvalidKey(detail),
            _ => StoreError::Unavailable(format!("{status}: {detail}")),
        }
    }
}

#[async_trait]
impl ArtifactStore for BucketStore {
    async fn put(&self, key: &ArtifactKey, bytes: Bytes) -> Result<(), StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::Empty);
        }
        let resp = self
            .http
            .put(artifact_url(&self.endpoint, key))
            .bearer_auth(&self.token)
            .body(bytes)
            .send()
            .await
            .map_err(Self::unavailable)?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(Self::error_from(key.path(), resp).await)
        }
    }

    async fn get(&self, key: &ArtifactKey) -> Result<Bytes, StoreError> {
        let resp = self
            .http
            .get(artifact_url(&self.endpoint, key))
            .send()
            .await
            .map_err(Self::unavailable)?;
        if resp.status().is_success() {
            resp.bytes().await.map_err(Self::unavailable)
        } else {
            Err(Self::error_from(key.path(), resp).await)
        }
    }

    async fn list(&self, job_id: &str) -> Result<BTreeSet<ArtifactKind>, StoreError> {
        validate_job_id(job_id)?;
        let mut url = self.endpoint.clone();
        url.path_segments_mut()
            .expect("http endpoint")
            .pop_if_empty()
            .push("jobs")
            .push(job_id)
            .push("");
        let resp = self.http.get(url).send().await.map_err(Self::unavailable)?;
        if !resp.status().is_success() {
            return Err(Self::error_from(format!("jobs/{job_id}/"), resp).await);
        }
        let listing: Listing = resp.json().await.map_err(Self::unavailable)?;
        Ok(listing
            .artifacts
            .iter()
            .filter_map(|f| ArtifactKind::from_file_name(f))
            .collect())
    }

    fn public_url(&self, key: &ArtifactKey) -> Url {
        artifact_url(&self.public_base, key)
    }
}
