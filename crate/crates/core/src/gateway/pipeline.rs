use std::sync::Arc;

use axum::http::{HeaderMap, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use bytes::Bytes;
use serde_json::json;

use super::{error_body, ActiveJobRow, Gateway, Metric, Progress, Services};
use crate::ledger::Acquire;
use crate::plugin::{AuthorizationReason, Caller, JobReport, JobStatus, JobSubmission, ReportPhase};
use crate::store::{ArtifactKey, ArtifactKind, StoreError};

/// Submission pipeline: parse, authorize, acquire quota, forward, record.
pub(super) async fn submit(
    gw: &Arc<Gateway>,
    caller: Caller,
    job_type: &str,
    path_and_query: &str,
    headers: &HeaderMap,
    body: Bytes,
) -> Response {
    let services = &gw.services;
    let received_at = services.clock.now();

    let submission = match services
        .vendor
        .parse_submission(&caller, job_type, headers, body, received_at)
    {
        Ok(s) => s,
        Err(e) => {
            gw.metrics.incr(Metric::MalformedSubmissions);
            return error_body(StatusCode::BAD_REQUEST, "malformed_payload", e);
        }
    };

    let estimate = services.vendor.estimate_qpu_ms(&submission);
    let verdict = match services.site.authorize_job(&submission, estimate).await {
        Ok(v) if v.is_consistent() => v,
        Ok(v) => {
            tracing::error!(?v, "inconsistent authorization verdict");
            gw.metrics.incr(Metric::AuthorizationUnavailable);
            return error_body(StatusCode::SERVICE_UNAVAILABLE, "authorization_unavailable", "inconsistent verdict");
        }
        Err(e) => {
            tracing::warn!(error = %e, "authorization backend unavailable; rejecting");
            gw.metrics.incr(Metric::AuthorizationUnavailable);
            return error_body(StatusCode::SERVICE_UNAVAILABLE, "authorization_unavailable", e);
        }
    };
    let Some(project_id) = verdict.resolved_project.clone().filter(|_| verdict.allowed) else {
        gw.metrics.incr(match verdict.reason {
            AuthorizationReason::NoProject => Metric::DeniedNoProject,
            AuthorizationReason::ExclusiveReservation => Metric::DeniedExclusiveReservation,
            _ => Metric::DeniedBudgetExhausted,
        });
        return error_body(StatusCode::FORBIDDEN, verdict.reason.as_str(), denial_detail(verdict.reason, estimate));
    };

    let user = submission.user_id.clone();
    let units = submission.shot_units();
    let quota_held = match services.ledger.try_acquire(&user, units).await {
        Acquire::Acquired => true,
        Acquire::OverLimit => {
            gw.metrics.incr(Metric::RateLimited);
            return error_body(
                StatusCode::TOO_MANY_REQUESTS,
                AuthorizationReason::FairnessLimit.as_str(),
                format!(
                    "outstanding shots would exceed the per-user limit of {}",
                    services.ledger.s_max()
                ),
            );
        }
        Acquire::StoreUnavailable => {
            tracing::warn!(user_id = %user, shot_units = units, "fairness counter store unavailable; admitting without quota");
            gw.metrics.incr(Metric::CounterFailOpen);
            false
        }
    };

    let upstream = gw
        .forward(Method::POST, path_and_query, headers, submission.raw_payload.clone())
        .await;
    let upstream = match upstream {
        Ok(up) => up,
        Err(e) => {
            rollback(gw, &user, units, quota_held).await;
            gw.metrics.incr(Metric::UpstreamFailures);
            return error_body(StatusCode::BAD_GATEWAY, "upstream_unavailable", e);
        }
    };
    if upstream.status.is_server_error() {
        rollback(gw, &user, units, quota_held).await;
        gw.metrics.incr(Metric::UpstreamFailures);
        let detail = String::from_utf8_lossy(&upstream.body).into_owned();
        return (
            StatusCode::BAD_GATEWAY,
            Json(json!({
                "error": "upstream_error",
                "upstream_status": upstream.status.as_u16(),
                "detail": detail,
            })),
        )
            .into_response();
    }
    if !upstream.status.is_success() {
        rollback(gw, &user, units, quota_held).await;
        return upstream.into_response();
    }
    let result = match services
        .vendor
        .parse_submission_response(upstream.status, upstream.body.clone())
    {
        Ok(r) if r.is_success() => r,
        Ok(_) | Err(_) => {
            rollback(gw, &user, units, quota_held).await;
            gw.metrics.incr(Metric::UpstreamFailures);
            return error_body(StatusCode::BAD_GATEWAY, "upstream_error", "unreadable submission response");
        }
    };

    let row = ActiveJobRow {
        job_id: result.job_id.clone(),
        user_id: user,
        project_id,
        num_circuits: submission.num_circuits,
        shots: submission.shots,
        shot_units: units,
        charge_budget: verdict.charge_budget,
        submitted_at: received_at,
        quota_held,
        progress: Progress::None,
        outcome: None,
        circuit: submission.raw_payload.clone(),
        calibration: None,
    };
    services.active.insert(row.clone());
    gw.metrics.incr(Metric::SubmissionsAccepted);
    spawn_post_submission(gw, row, submission);
    upstream.into_response()
}

fn denial_detail(reason: AuthorizationReason, estimate: u64) -> String {
    match reason {
        AuthorizationReason::NoProject => "caller is not a member of any usable project".into(),
        AuthorizationReason::ExclusiveReservation => {
            "the machine is reserved for another project".into()
        }
        AuthorizationReason::BudgetExhausted => {
            format!("project budget cannot cover an estimated {estimate} ms")
        }
        other => other.as_str().into(),
    }
}

async fn rollback(gw: &Gateway, user: &str, units: u64, quota_held: bool) {
    if !quota_held {
        return;
    }
    gw.metrics.incr(Metric::Rollbacks);
    if let Err(e) = gw.services.ledger.rollback(user, units).await {
        tracing::error!(user_id = user, shot_units = units, error = %e, "fairness rollback failed");
    }
}

/// Uploads tolerate an existing object: the reporter may have archived the
/// same artifact first.
async fn put_once(services: &Services, job_id: &str, kind: ArtifactKind, bytes: Bytes) -> Result<(), StoreError> {
    let key = ArtifactKey::new(job_id, kind)?;
    match services.store.put(&key, bytes).await {
        Ok(()) | Err(StoreError::Conflict(_)) => Ok(()),
        Err(e) => Err(e),
    }
}

fn spawn_post_submission(gw: &Arc<Gateway>, row: ActiveJobRow, submission: JobSubmission) {
    let services = gw.services.clone();
    let bg = gw.background.clone();
    let job_id = row.job_id.clone();
    gw.background.spawn(async move {
        let calibration = async {
            let report = bg
                .retry(&job_id, "fetch_calibration", || services.vendor.fetch_calibration())
                .await?;
            services
                .active
                .update(&job_id, |r| r.calibration = Some(report.raw.clone()));
            bg.retry(&job_id, "upload_calibration", || {
                put_once(&services, &job_id, ArtifactKind::Calibration, report.raw.clone())
            })
            .await
        };
        let circuit = bg.retry(&job_id, "upload_circuit", || {
            put_once(&services, &job_id, ArtifactKind::Circuit, submission.raw_payload.clone())
        });
        let report = JobReport {
            job_id: job_id.clone(),
            phase: ReportPhase::Submitted,
            status: JobStatus::Pending,
            qpu_time_ms: None,
            user_id: row.user_id.clone(),
            project_id: row.project_id.clone(),
            num_circuits: row.num_circuits,
            shots: row.shots,
            charge_budget: row.charge_budget,
            submitted_at: row.submitted_at,
            result_url: None,
        };
        let reported = bg.retry(&job_id, "report_submitted", || services.site.report_job(&report));
        futures::join!(calibration, circuit, reported);
    });
}
