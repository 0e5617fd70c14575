//! Background job reporter.
//!
//! Each cycle polls every active job. A job that reached a terminal state
//! goes through six steps: fetch artifacts, upload them, compute the result
//! URL, report completion, release quota, delete the row. The row's
//! `progress` marker records the last durable step so that a crash anywhere
//! resumes without charging or releasing twice.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::routing::get;
use axum::{Json, Router};
use bytes::Bytes;
use futures::StreamExt;
use parking_lot::Mutex;
use serde::Serialize;

use crate::config::{env_parse, ConfigError};
use crate::gateway::{ActiveJobRow, Outcome, Progress, Services};
use crate::plugin::{JobReport, ReportPhase};
use crate::store::{ArtifactKey, ArtifactKind, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReporterStep {
    FetchArtifacts,
    Upload,
    ResultUrl,
    ReportCompleted,
    ReleaseQuota,
    DeleteRow,
}

impl ReporterStep {
    pub const ALL: [ReporterStep; 6] = [
        ReporterStep::FetchArtifacts,
        ReporterStep::Upload,
        ReporterStep::ResultUrl,
        ReporterStep::ReportCompleted,
        ReporterStep::ReleaseQuota,
        ReporterStep::DeleteRow,
    ];
}

/// Called before each step; returning `true` abandons the job for this
/// cycle as if the process died at that point.
pub type CrashHook = Arc<dyn Fn(&str, ReporterStep) -> bool + Send + Sync>;

#[derive(Debug, Clone, Copy)]
pub struct ReporterConfig {
    pub interval: Duration,
    pub concurrency: usize,
}

impl Default for ReporterConfig {
    fn default() -> Self {
        Self {
            interval: Duration::from_millis(1000),
            concurrency: 16,
        }
    }
}

impl ReporterConfig {
    pub fn from_env() -> Result<Self, ConfigError> {
        Ok(Self {
            interval: Duration::from_millis(env_parse("REPORTER_INTERVAL_MS", 1000u64)?),
            ..Self::default()
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CycleSummary {
    pub polled: usize,
    pub completed: usize,
    pub pending: usize,
    pub failed_polls: usize,
    /// Terminal jobs whose upload, report or release must be retried.
    pub deferred: usize,
    pub crashed: usize,
}

enum RowResult {
    Pending,
    Completed,
    PollFailed,
    Deferred,
    Crashed,
}

pub struct Reporter {
    services: Services,
    config: ReporterConfig,
    crash_hook: Option<CrashHook>,
    cycle_lock: tokio::sync::Mutex<()>,
    last: Mutex<Option<CycleSummary>>,
}

impl std::fmt::Debug for Reporter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reporter").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Reporter {
    pub fn new(services: Services, config: ReporterConfig) -> Self {
        Self {
            services,
            config,
            crash_hook: None,
            cycle_lock: tokio::sync::Mutex::new(()),
            last: Mutex::new(None),
        }
    }

    pub fn with_crash_hook(mut self, hook: CrashHook) -> Self {
        self.crash_hook = Some(hook);
        self
    }

    pub fn last_summary(&self) -> Option<CycleSummary> {
        *self.last.lock()
    }

    /// Runs one pass over the active-jobs table. Cycles never overlap.
    pub async fn run_cycle(&self) -> CycleSummary {
        let _exclusive = self.cycle_lock.lock().await;
        let rows = self.services.active.snapshot();
        let mut summary = CycleSummary {
            polled: rows.len(),
            ..CycleSummary::default()
        };
        let mut results = futures::stream::iter(rows)
            .map(|row| self.process(row))
            .buffer_unordered(self.config.concurrency.max(1));
        while let Some(r) = results.next().await {
            match r {
                RowResult::Pending => summary.pending += 1,
                RowResult::Completed => summary.completed += 1,
                RowResult::PollFailed => summary.failed_polls += 1,
                RowResult::Deferred => summary.deferred += 1,
                RowResult::Crashed => summary.crashed += 1,
            }
        }
        *self.last.lock() = Some(summary);
        summary
    }

    /// Cycles until the table is empty or `max_cycles` is reached.
    pub async fn drain(&self, max_cycles: usize) -> usize {
        for n in 0..max_cycles {
            if self.services.active.is_empty() {
                return n;
            }
            self.run_cycle().await;
        }
        max_cycles
    }

    pub fn spawn(self: &Arc<Self>) -> tokio::task::JoinHandle<()> {
        let me = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(me.config.interval);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tick.tick().await;
                let s = me.run_cycle().await;
                if s.completed + s.failed_polls + s.deferred > 0 {
                    tracing::info!(?s, "reporter cycle");
                }
            }
        })
    }

    /// `GET /health` with the last cycle summary.
    pub fn router(self: &Arc<Self>) -> Router {
        Router::new()
            .route(
                "/health",
                get(|State(r): State<Arc<Reporter>>| async move {
                    Json(serde_json::json!({
                        "status": "ok",
                        "active_jobs": r.services.active.len(),
                        "last_cycle": r.last_summary(),
                    }))
                }),
            )
            .with_state(self.clone())
    }

    fn crashes_before(&self, job_id: &str, step: ReporterStep) -> bool {
        let crashed = self.crash_hook.as_ref().is_some_and(|h| h(job_id, step));
        if crashed {
            tracing::debug!(job_id, ?step, "injected crash");
        }
        crashed
    }

    async fn put(&self, job_id: &str, kind: ArtifactKind, bytes: Bytes) -> Result<(), StoreError> {
        let key = ArtifactKey::new(job_id, kind)?;
        match self.services.store.put(&key, bytes).await {
            Ok(()) | Err(StoreError::Conflict(_)) => Ok(()),
            Err(e) => Err(e),
        }
    }

    async fn process(&self, row: ActiveJobRow) -> RowResult {
        let s = &self.services;
        let job_id = row.job_id.as_str();
        let mut outcome = row.outcome.clone();

        if row.progress < Progress::Uploaded {
            if self.crashes_before(job_id, ReporterStep::FetchArtifacts) {
                return RowResult::Crashed;
            }
            let polled = match s.vendor.poll_job(job_id).await {
                Ok(p) => p,
                Err(e) => {
                    tracing::warn!(job_id, error = %e, "poll failed");
                    return RowResult::PollFailed;
                }
            };
            if !polled.status.is_terminal() {
                return RowResult::Pending;
            }
            let o = Outcome {
                status: polled.status,
                qpu_time_ms: polled.qpu_time_ms.unwrap_or(0),
            };
            s.active.update(job_id, |r| r.outcome = Some(o.clone()));
            outcome = Some(o);

            if self.crashes_before(job_id, ReporterStep::Upload) {
                return RowResult::Crashed;
            }
            if let Err(e) = self.upload(&row, polled.artifacts.unwrap_or_default()).await {
                tracing::warn!(job_id, error = %e, "artifact upload failed; will retry");
                return RowResult::Deferred;
            }
            s.active.update(job_id, |r| r.progress = Progress::Uploaded);
        }
        let outcome = outcome.expect("outcome recorded before upload");

        if self.crashes_before(job_id, ReporterStep::ResultUrl) {
            return RowResult::Crashed;
        }
        let result_url = s.site.result_url(job_id);

        if row.progress < Progress::Reported {
            if self.crashes_before(job_id, ReporterStep::ReportCompleted) {
                return RowResult::Crashed;
            }
            let report = JobReport {
                job_id: job_id.to_string(),
                phase: ReportPhase::Completed,
                status: outcome.status,
                qpu_time_ms: Some(outcome.qpu_time_ms),
                user_id: row.user_id.clone(),
                project_id: row.project_id.clone(),
                num_circuits: row.num_circuits,
                shots: row.shots,
                charge_budget: row.charge_budget,
                submitted_at: row.submitted_at,
                result_url: Some(result_url.to_string()),
            };
            if let Err(e) = s.site.report_job(&report).await {
                tracing::warn!(job_id, error = %e, "completion report failed; will retry");
                return RowResult::Deferred;
            }
            s.active.update(job_id, |r| r.progress = Progress::Reported);
        }

        if row.progress < Progress::Released {
            if self.crashes_before(job_id, ReporterStep::ReleaseQuota) {
                return RowResult::Crashed;
            }
            if row.quota_held {
                if let Err(e) = s.ledger.release(&row.user_id, row.shot_units).await {
                    tracing::warn!(job_id, error = %e, "quota release failed; will retry");
                    return RowResult::Deferred;
                }
            }
            s.active.update(job_id, |r| r.progress = Progress::Released);
        }

        if self.crashes_before(job_id, ReporterStep::DeleteRow) {
            return RowResult::Crashed;
        }
        s.active.remove(job_id);
        RowResult::Completed
    }

    async fn upload(
        &self,
        row: &ActiveJobRow,
        artifacts: std::collections::BTreeMap<String, Bytes>,
    ) -> Result<(), StoreError> {
        let job_id = row.job_id.as_str();
        if !row.circuit.is_empty() {
            self.put(job_id, ArtifactKind::Circuit, row.circuit.clone()).await?;
        }
        for (name, bytes) in artifacts {
            match name.parse::<ArtifactKind>() {
                Ok(kind) => self.put(job_id, kind, bytes).await?,
                Err(_) => tracing::debug!(job_id, artifact = %name, "ignoring unknown artifact"),
            }
        }
        // Prefer the snapshot taken at submission time; the current report
        // is a fallback when that fetch never completed.
        let calibration = match self.services.active.get(job_id).and_then(|r| r.calibration) {
            Some(c) => c,
            None => match self.services.vendor.fetch_calibration().await {
                Ok(report) => report.raw,
                Err(e) => return Err(StoreError::Unavailable(format!("calibration: {e}"))),
            },
        };
        self.put(job_id, ArtifactKind::Calibration, calibration).await
    }
}
