use bytes::Bytes;
use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::clock::{iso_ms, Timestamp};
use crate::plugin::JobStatus;

/// How far the reporter got with a finished job. Ordered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Progress {
    #[default]
    None,
    Uploaded,
    Reported,
    Released,
}

/// Terminal facts captured when the reporter first sees a job finish, so a
/// resumed pipeline does not need to poll again.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: JobStatus,
    pub qpu_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveJobRow {
    pub job_id: String,
    pub user_id: String,
    pub project_id: String,
    pub num_circuits: u32,
    pub shots: u32,
    pub shot_units: u64,
    pub charge_budget: bool,
    #[serde(with = "iso_ms")]
    pub submitted_at: Timestamp,
    /// False when the counter store was down at submission; nothing to
    /// release then.
    pub quota_held: bool,
    pub progress: Progress,
    #[serde(default)]
    pub outcome: Option<Outcome>,
    #[serde(skip)]
    pub circuit: Bytes,
    /// Device calibration fetched right after submission.
    #[serde(skip)]
    pub calibration: Option<Bytes>,
}

/// Jobs accepted upstream and not yet fully processed by the reporter.
#[derive(Debug, Default)]
pub struct ActiveJobs {
    rows: DashMap<String, ActiveJobRow>,
}

impl ActiveJobs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, row: ActiveJobRow) {
        self.rows.insert(row.job_id.clone(), row);
    }

    pub fn get(&self, job_id: &str) -> Option<ActiveJobRow> {
        self.rows.get(job_id).map(|r| r.clone())
    }

    /// Applies `f` to the row if it still exists.
    pub fn update(&self, job_id: &str, f: impl FnOnce(&mut ActiveJobRow)) -> bool {
        match self.rows.get_mut(job_id) {
            Some(mut row) => {
                f(&mut row);
                true
            }
            None => false,
        }
    }

    pub fn remove(&self, job_id: &str) -> Option<ActiveJobRow> {
        self.rows.remove(job_id).map(|(_, r)| r)
    }

    pub fn contains(&self, job_id: &str) -> bool {
        self.rows.contains_key(job_id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows ordered by submission time.
    pub fn snapshot(&self) -> Vec<ActiveJobRow> {
        let mut rows: Vec<_> = self.rows.iter().map(|r| r.clone()).collect();
        rows.sort_by(|a, b| (a.submitted_at, &a.job_id).cmp(&(b.submitted_at, &b.job_id)));
        rows
    }

    /// Shot units still held in the ledger for `user_id`.
    pub fn held_shot_units(&self, user_id: &str) -> u64 {
        self.rows
            .iter()
            .filter(|r| r.user_id == user_id && r.quota_held && r.progress < Progress::Released)
            .map(|r| r.shot_units)
            .sum()
    }
}
