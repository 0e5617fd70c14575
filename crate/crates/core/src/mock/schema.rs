//! Wire schema of the mock device API, shared by the device and its vendor
//! plugin.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::{iso_ms, Timestamp};
use crate::plugin::JobStatus;

/// Submission body: `{"circuits": [...], "shots": n, "metadata": {"project": "..."}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionPayload {
    pub circuits: Vec<serde_json::Value>,
    pub shots: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<SubmissionMetadata>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmissionMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<String>,
}

impl SubmissionPayload {
    /// Parses and checks `circuits` is non-empty and `shots >= 1`.
    pub fn parse(body: &[u8]) -> Result<Self, String> {
        let payload: SubmissionPayload =
            serde_json::from_slice(body).map_err(|e| e.to_string())?;
        if payload.circuits.is_empty() {
            return Err("circuits must not be empty".into());
        }
        if payload.shots == 0 {
            return Err("shots must be at least 1".into());
        }
        Ok(payload)
    }

    pub fn project(&self) -> Option<&str> {
        self.metadata.as_ref().and_then(|m| m.project.as_deref())
    }

    /// Convenience builder used by tests and examples.
    pub fn new(num_circuits: usize, shots: u32, project: Option<&str>) -> Self {
        let circuits = (0..num_circuits)
            .map(|i| {
                serde_json::json!({
                    "name": format!("circuit-{i}"),
                    "num_qubits": 5,
                    "instructions": [
                        {"name": "prx", "qubits": ["QB1"], "args": {"angle_t": 0.25, "phase_t": 0.0}},
                        {"name": "cz", "qubits": ["QB1", "QB3"]},
                        {"name": "measure", "qubits": ["QB1", "QB3"], "args": {"key": "m"}}
                    ]
                })
            })
            .collect();
        Self {
            circuits,
            shots,
            metadata: project.map(|p| SubmissionMetadata {
                project: Some(p.to_string()),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("payload serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEntry {
    pub status: String,
    #[serde(with = "iso_ms")]
    pub timestamp: Timestamp,
}

/// Body of `GET /jobs/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub job_type: String,
    pub status: JobStatus,
    pub num_circuits: u32,
    pub shots: u32,
    #[serde(with = "iso_ms")]
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_position: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qpu_time_ms: Option<u64>,
    /// Per circuit, per shot measured bitstrings. Present when ready.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<Vec<Vec<String>>>,
    pub timeline: Vec<TimelineEntry>,
}

/// Body of `GET /calibration/latest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationView {
    #[serde(with = "iso_ms")]
    pub timestamp: Timestamp,
    pub metrics: BTreeMap<String, f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_circuits_and_shots() {
        assert!(SubmissionPayload::parse(br#"{"circuits":[],"shots":10}"#).is_err());
        assert!(SubmissionPayload::parse(br#"{"circuits":[{}],"shots":0}"#).is_err());
        assert!(SubmissionPayload::parse(br#"{"circuits":[{}],"shots":1"#).is_err());
    }

    #[test]
    fn project_from_metadata() {
        let p = SubmissionPayload::parse(
            br#"{"circuits":[{}],"shots":3,"metadata":{"project":"course-qc"}}"#,
        )
        .unwrap();
        assert_eq!(p.project(), Some("course-qc"));
        let p = SubmissionPayload::parse(br#"{"circuits":[{}],"shots":3,"metadata":{}}"#).unwrap();
        assert_eq!(p.project(), None);
    }
}
