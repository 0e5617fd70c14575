use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{JobLedgerRecord, Reservation};
use crate::clock::{iso_ms, Timestamp};
use crate::plugin::JobStatus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", content = "id", rename_all = "snake_case")]
pub enum ReportScope {
    Org(String),
    Project(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserUsage {
    pub job_count: u64,
    pub charged_qpu_ms: u64,
    pub uncharged_qpu_ms: u64,
}

/// Usage over `[from, to)`. Jobs are attributed by `submitted_at`,
/// reservations by their start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BillingReport {
    #[serde(flatten)]
    pub scope: ReportScope,
    #[serde(with = "iso_ms")]
    pub from: Timestamp,
    #[serde(with = "iso_ms")]
    pub to: Timestamp,
    pub job_count: u64,
    pub completed_jobs: u64,
    pub failed_jobs: u64,
    /// Amount debited from budgets for completed jobs.
    pub total_qpu_ms: u64,
    /// Time run under the project's own reservation or past its budget.
    pub uncharged_qpu_ms: u64,
    pub reservation_count: u64,
    pub reservation_ms: u64,
    pub per_user: BTreeMap<String, UserUsage>,
}

pub(super) fn build<'a>(
    scope: ReportScope,
    from: Timestamp,
    to: Timestamp,
    jobs: impl Iterator<Item = &'a JobLedgerRecord>,
    reservations: impl Iterator<Item = &'a Reservation>,
) -> BillingReport {
    let mut report = BillingReport {
        scope,
        from,
        to,
        job_count: 0,
        completed_jobs: 0,
        failed_jobs: 0,
        total_qpu_ms: 0,
        uncharged_qpu_ms: 0,
        reservation_count: 0,
        reservation_ms: 0,
        per_user: BTreeMap::new(),
    };
    for job in jobs.filter(|j| from <= j.submitted_at && j.submitted_at < to) {
        report.job_count += 1;
        let usage = report.per_user.entry(job.user_id.clone()).or_default();
        usage.job_count += 1;
        match job.status {
            JobStatus::Ready => report.completed_jobs += 1,
            JobStatus::Failed => report.failed_jobs += 1,
            _ => {}
        }
        let qpu = job.qpu_time_ms.unwrap_or(0);
        let charged = if job.charged { job.charged_ms } else { 0 };
        let uncharged = qpu - charged.min(qpu);
        report.total_qpu_ms += charged;
        report.uncharged_qpu_ms += uncharged;
        usage.charged_qpu_ms += charged;
        usage.uncharged_qpu_ms += uncharged;
    }
    for r in reservations.filter(|r| from <= r.start && r.start < to) {
        report.reservation_count += 1;
        report.reservation_ms += r.charged_ms;
    }
    report
}
