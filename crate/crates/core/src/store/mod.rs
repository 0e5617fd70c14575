//! Long-term artifact storage keyed by job id.
//!
//! Layout: `jobs/<job_id>/<kind>.json`. Keys are write-once: repeating a put
//! with identical bytes is a no-op, different bytes are rejected.

mod bucket;
mod fs;
pub mod http;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use async_trait::async_trait;
use bytes::Bytes;
use serde::{Deserialize, Serialize};
use url::Url;

pub use bucket::BucketStore;
pub use fs::FsArtifactStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Circuit,
    Results,
    Timeline,
    Calibration,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 4] = [
        ArtifactKind::Circuit,
        ArtifactKind::Results,
        ArtifactKind::Timeline,
        ArtifactKind::Calibration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Circuit => "circuit",
            ArtifactKind::Results => "results",
            ArtifactKind::Timeline => "timeline",
            ArtifactKind::Calibration => "calibration",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.json", self.as_str())
    }

    /// Inverse of [`ArtifactKind::file_name`].
    pub fn from_file_name(name: &str) -> Option<Self> {
        name.strip_suffix(".json").and_then(|s| s.parse().ok())
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArtifactKind {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArtifactKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StoreError::InvalidKey(format!("unknown artifact kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArtifactKey {
    pub job_id: String,
    pub kind: ArtifactKind,
}

impl ArtifactKey {
    pub fn new(job_id: impl Into<String>, kind: ArtifactKind) -> Result<Self, StoreError> {
        let job_id = job_id.into();
        validate_job_id(&job_id)?;
        Ok(Self { job_id, kind })
    }

    /// `jobs/<job_id>/<kind>.json`
    pub fn path(&self) -> String {
        format!("jobs/{}/{}", self.job_id, self.kind.file_name())
    }
}

pub fn validate_job_id(job_id: &str) -> Result<(), StoreError> {
    let bad = job_id.is_empty()
        || job_id == "."
        || job_id == ".."
        || job_id
            .chars()
            .any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        return Err(StoreError::InvalidKey(format!("invalid job id {job_id:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("artifact {0} not found")]
    NotFound(String),
    #[error("artifact store unavailable: {0}")]
    Unavailable(String),
    #[error("artifact {0} already stored with different content")]
    Conflict(String),
    #[error("refusing to store an empty artifact")]
    Empty,
    #[error("{0}")]
    InvalidKey(String),
}

#[async_trait]
pub trait ArtifactStore: Send + Sync {
    async fn put(&self, key: &ArtifactKey, bytes: Bytes) -> Result<(), StoreError>;

    async fn get(&self, key: &ArtifactKey) -> Result<Bytes, StoreError>;

    async fn list(&self, job_id: &str) -> Result<BTreeSet<ArtifactKind>, StoreError>;

    /// Public URL that dereferences to the artifact's bytes.
    fn public_url(&self, key: &ArtifactKey) -> Url;
}

/// `<base>/jobs/<id>/<kind>.json`
pub fn artifact_url(base: &Url, key: &ArtifactKey) -> Url {
    let mut url = base.clone();
    {
        let mut segs = url.path_segments_mut().expect("http base url");
        segs.pop_if_empty()
            .push("jobs")
            .push(&key.job_id)
            .push(&key.kind.file_name());
    }
    url
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_path_layout() {
        let key = ArtifactKey::new("J-42", ArtifactKind::Calibration).unwrap();
        assert_eq!(key.path(), "jobs/J-42/calibration.json");
    }

    #[test]
    fn rejects_traversal_ids() {
        for bad in ["", ".", "..", "a/b", "a\\b", "x\n"] {
            assert!(ArtifactKey::new(bad, ArtifactKind::Results).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn kind_file_names_roundtrip() {
        for kind in ArtifactKind::ALL {
            assert_eq!(ArtifactKind::from_file_name(&kind.file_name()), Some(kind));
        }
        assert_eq!(ArtifactKind::from_file_name("results.txt"), None);
    }

    #[test]
    fn url_under_base_path() {
        let key = ArtifactKey::new("J-1", ArtifactKind::Results).unwrap();
        let base = Url::parse("http://h:1/store/").unwrap();
        assert_eq!(
            artifact_url(&base, &key).as_str(),
            "http://h:1/store/jobs/J-1/results.json"
        );
    }
}
