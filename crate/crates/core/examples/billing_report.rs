//! Job lifecycle reports feeding budgets and a usage report.
//!
//!     cargo run --example billing_report

use std::collections::BTreeSet;
use std::sync::Arc;

use qpu_gatekeeper::accounting::{
    Accounting, Actor, Membership, NewOrganisation, NewProject, NewUser, ReportScope, Role,
};
use qpu_gatekeeper::clock::{parse_ts, Clock, ManualClock};
use qpu_gatekeeper::plugin::{JobReport, JobStatus, ReportPhase};

fn main() {
    let clock = ManualClock::new(parse_ts("2026-04-01T00:00:00Z").unwrap());
    let acc = Accounting::in_memory(Arc::new(clock.clone()));
    let svc = Actor::Service;

    acc.create_org(&svc, NewOrganisation { org_id: Some("uni".into()), name: "University".into(), yearly_budget_ms: 10_000_000 })
        .unwrap();
    acc.create_project(&svc, NewProject { project_id: Some("qec".into()), org_id: "uni".into(), name: "QEC".into(), budget_ms: 5_000 })
        .unwrap();
    for user in ["ana", "ben"] {
        acc.create_user(&svc, NewUser {
            user_id: Some(user.into()),
            username: user.into(),
            org_ids: BTreeSet::from(["uni".to_string()]),
            role: Role::Regular,
            password: None,
        })
        .unwrap();
        acc.add_member(&svc, "qec", Membership { user_id: user.into(), pi: false }).unwrap();
    }

    let jobs = [("J-1", "ana", JobStatus::Ready, 1_200), ("J-2", "ben", JobStatus::Ready, 2_400), ("J-3", "ana", JobStatus::Failed, 0), ("J-4", "ben", JobStatus::Ready, 3_000)];
    for (job_id, user, status, qpu) in jobs {
        let mut report = JobReport {
            job_id: job_id.into(),
            phase: ReportPhase::Submitted,
            status: JobStatus::Pending,
            qpu_time_ms: None,
            user_id: user.into(),
            project_id: "qec".into(),
            num_circuits: 10,
            shots: 1_000,
            charge_budget: true,
            submitted_at: clock.now(),
            result_url: None,
        };
        acc.report_job(&report).unwrap();
        clock.advance_ms(60_000);
        report.phase = ReportPhase::Completed;
        report.status = status;
        report.qpu_time_ms = Some(qpu);
        println!("{job_id} completed: {:?}", acc.report_job(&report).unwrap());
        // Repeats are acknowledged but change nothing.
        assert_eq!(format!("{:?}", acc.report_job(&report).unwrap()), "DuplicateIgnored");
    }

    let qec = acc.project_snapshot("qec").unwrap();
    println!("qec consumed {} of {} ms", qec.consumed_ms, qec.budget_ms);
    for r in acc.job_records() {
        println!("  {} {:?} charged={} overage={}", r.job_id, r.status, r.charged_ms, r.overage_ms);
    }

    let report = acc
        .billing_report(
            &svc,
            &ReportScope::Project("qec".into()),
            parse_ts("2026-04-01T00:00:00Z").unwrap(),
            parse_ts("2026-05-01T00:00:00Z").unwrap(),
        )
        .unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}
