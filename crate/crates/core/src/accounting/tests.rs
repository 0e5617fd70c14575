use std::collections::BTreeSet;
use std::sync::Arc;

use super::*;
use crate::clock::{parse_ts, ManualClock, Timestamp};
use crate::plugin::{AuthorizationReason, JobReport, JobStatus, ReportPhase};

fn ts(s: &str) -> Timestamp {
    parse_ts(s).unwrap()
}

struct Fixture {
    acc: Accounting,
    clock: ManualClock,
}

/// Org `o1` (10,000,000 ms) with project `p1` (budget 1,000,000 ms), a PI
/// `pi1`, a regular member `u1`, and a slot covering 10:00-12:00.
fn fixture() -> Fixture {
    let clock = ManualClock::new(ts("2026-03-01T08:00:00Z"));
    let acc = Accounting::in_memory(Arc::new(clock.clone()));
    let s = Actor::Service;
    acc.create_org(&s, NewOrganisation { org_id: Some("o1".into()), name: "Org one".into(), yearly_budget_ms: 10_000_000 })
        .unwrap();
    acc.create_project(&s, NewProject { project_id: Some("p1".into()), org_id: "o1".into(), name: "P1".into(), budget_ms: 1_000_000 })
        .unwrap();
    for (id, role) in [("pi1", Role::Pi), ("u1", Role::Regular)] {
        acc.create_user(&s, NewUser {
            user_id: Some(id.into()),
            username: id.into(),
            org_ids: BTreeSet::from(["o1".to_string()]),
            role,
            password: None,
        })
        .unwrap();
    }
    acc.add_member(&s, "p1", Membership { user_id: "pi1".into(), pi: true }).unwrap();
    acc.add_member(&s, "p1", Membership { user_id: "u1".into(), pi: false }).unwrap();
    acc.create_slot(&s, NewSlot {
        slot_id: Some("s1".into()),
        org_id: "o1".into(),
        start: ts("2026-03-01T10:00:00Z"),
        end: ts("2026-03-01T12:00:00Z"),
    })
    .unwrap();
    Fixture { acc, clock }
}

fn report(job: &str, phase: ReportPhase, status: JobStatus, qpu: Option<u64>, charge: bool) -> JobReport {
    JobReport {
        job_id: job.into(),
        phase,
        status,
        qpu_time_ms: qpu,
        user_id: "u1".into(),
        project_id: "p1".into(),
        num_circuits: 5,
        shots: 1000,
        charge_budget: charge,
        submitted_at: ts("2026-03-01T08:00:00Z"),
        result_url: None,
    }
}

fn consumed(acc: &Accounting) -> u64 {
    acc.project_snapshot("p1").unwrap().consumed_ms
}

fn authorise(acc: &Accounting, user: &str, hint: Option<&str>, est: u64, at: &str) -> crate::plugin::JobAuthorizationResult {
    acc.authorise_job(&AuthoriseRequest {
        user_id: user.into(),
        project_hint: hint.map(Into::into),
        estimated_cost_ms: est,
        at: Some(ts(at)),
    })
}

#[test]
fn approved_with_budget_left() {
    let f = fixture();
    f.acc
        .update_project(&Actor::Service, "p1", ProjectPatch { budget_ms: Some(500), ..Default::default() })
        .unwrap();
    let v = authorise(&f.acc, "u1", None, 120, "2026-03-01T09:00:00Z");
    assert!(v.allowed && v.charge_budget);
    assert_eq!(v.resolved_project.as_deref(), Some("p1"));
}

#[test]
fn budget_check_allows_landing_exactly_on_cap() {
    let f = fixture();
    f.acc
        .update_project(&Actor::Service, "p1", ProjectPatch { budget_ms: Some(600), ..Default::default() })
        .unwrap();
    assert!(authorise(&f.acc, "u1", None, 600, "2026-03-01T09:00:00Z").allowed);
    let v = authorise(&f.acc, "u1", None, 601, "2026-03-01T09:00:00Z");
    assert_eq!(v.reason, AuthorizationReason::BudgetExhausted);
}

#[test]
fn no_membership_means_no_project() {
    let f = fixture();
    f.acc
        .create_user(&Actor::Service, NewUser {
            user_id: Some("loner".into()),
            username: "loner".into(),
            org_ids: BTreeSet::new(),
            role: Role::Regular,
            password: None,
        })
        .unwrap();
    let v = authorise(&f.acc, "loner", Some("p1"), 1, "2026-03-01T09:00:00Z");
    assert!(!v.allowed);
    assert_eq!(v.reason, AuthorizationReason::NoProject);
    assert_eq!(authorise(&f.acc, "ghost", None, 1, "2026-03-01T09:00:00Z").reason, AuthorizationReason::NoProject);
}

#[test]
fn reservations_gate_access() {
    let f = fixture();
    let s = Actor::Service;
    f.acc
        .create_project(&s, NewProject { project_id: Some("q1".into()), org_id: "o1".into(), name: "Q".into(), budget_ms: 1_000_000 })
        .unwrap();
    f.acc.add_member(&s, "q1", Membership { user_id: "pi1".into(), pi: true }).unwrap();
    f.acc
        .create_reservation(&Actor::User("pi1".into()), NewReservation {
            project_id: "q1".into(),
            start: ts("2026-03-01T10:00:00Z"),
            end: ts("2026-03-01T10:10:00Z"),
        })
        .unwrap();
    // u1 only belongs to p1; q1 holds the machine.
    let v = authorise(&f.acc, "u1", None, 1, "2026-03-01T10:05:00Z");
    assert_eq!(v.reason, AuthorizationReason::ExclusiveReservation);
    // Own reservation bypasses the budget entirely.
    f.acc
        .update_project(&s, "q1", ProjectPatch { budget_ms: Some(600_000), ..Default::default() })
        .unwrap();
    assert_eq!(f.acc.project_snapshot("q1").unwrap().remaining_ms(), 0);
    let v = authorise(&f.acc, "pi1", Some("q1"), 10_000, "2026-03-01T10:05:00Z");
    assert!(v.allowed);
    assert!(!v.charge_budget);
    // Reservation end is exclusive.
    assert!(authorise(&f.acc, "u1", None, 1, "2026-03-01T10:10:00Z").allowed);
}

#[test]
fn report_lifecycle_charges_once() {
    let f = fixture();
    assert_eq!(f.acc.report_job(&report("J-1", ReportPhase::Submitted, JobStatus::Pending, None, true)).unwrap(), ReportAck::Recorded);
    let done = report("J-1", ReportPhase::Completed, JobStatus::Ready, Some(600), true);
    assert_eq!(f.acc.report_job(&done).unwrap(), ReportAck::Recorded);
    assert_eq!(consumed(&f.acc), 600);
    assert_eq!(f.acc.report_job(&done).unwrap(), ReportAck::DuplicateIgnored);
    assert_eq!(consumed(&f.acc), 600);
    assert_eq!(f.acc.org_snapshot("o1").unwrap().consumed_ms, 600);
}

#[test]
fn failed_or_uncharged_jobs_cost_nothing() {
    let f = fixture();
    f.acc.report_job(&report("J-2", ReportPhase::Completed, JobStatus::Failed, Some(0), true)).unwrap();
    f.acc.report_job(&report("J-3", ReportPhase::Completed, JobStatus::Ready, Some(300), false)).unwrap();
    assert_eq!(consumed(&f.acc), 0);
}

#[test]
fn report_for_unknown_project_rejected() {
    let f = fixture();
    let mut r = report("J-4", ReportPhase::Submitted, JobStatus::Pending, None, true);
    r.project_id = "nope".into();
    assert!(matches!(f.acc.report_job(&r), Err(AccountingError::UnknownProject(_))));
}

#[test]
fn completion_charge_is_capped_at_budget() {
    let f = fixture();
    f.acc
        .update_project(&Actor::Service, "p1", ProjectPatch { budget_ms: Some(1000), ..Default::default() })
        .unwrap();
    f.acc.report_job(&report("J-5", ReportPhase::Completed, JobStatus::Ready, Some(1500), true)).unwrap();
    assert_eq!(consumed(&f.acc), 1000);
    let rec = &f.acc.job_records()[0];
    assert_eq!((rec.charged_ms, rec.overage_ms), (1000, 500));
}

#[test]
fn reservation_rules() {
    let f = fixture();
    let pi = Actor::User("pi1".into());
    let ten_min = NewReservation {
        project_id: "p1".into(),
        start: ts("2026-03-01T10:00:00Z"),
        end: ts("2026-03-01T10:10:00Z"),
    };
    f.acc
        .update_project(&Actor::Service, "p1", ProjectPatch { budget_ms: Some(700_000), ..Default::default() })
        .unwrap();
    assert!(matches!(
        f.acc.create_reservation(&Actor::User("u1".into()), ten_min.clone()),
        Err(AccountingError::NotAuthorised(_))
    ));
    let r = f.acc.create_reservation(&pi, ten_min.clone()).unwrap();
    assert_eq!(r.charged_ms, 600_000);
    assert_eq!(consumed(&f.acc), 600_000);

    let straddle = NewReservation {
        project_id: "p1".into(),
        start: ts("2026-03-01T11:59:00Z"),
        end: ts("2026-03-01T12:01:00Z"),
    };
    assert_eq!(f.acc.create_reservation(&pi, straddle), Err(AccountingError::OutsideSlot));
    assert!(matches!(f.acc.create_reservation(&pi, ten_min), Err(AccountingError::Overlap(_))));
    let too_long = NewReservation {
        project_id: "p1".into(),
        start: ts("2026-03-01T11:00:00Z"),
        end: ts("2026-03-01T11:10:00Z"),
    };
    assert!(matches!(
        f.acc.create_reservation(&pi, too_long),
        Err(AccountingError::InsufficientBudget { needed_ms: 600_000, remaining_ms: 100_000 })
    ));

    f.acc.cancel_reservation(&pi, &r.reservation_id).unwrap();
    assert_eq!(consumed(&f.acc), 0);
    assert!(matches!(f.acc.cancel_reservation(&pi, &r.reservation_id), Err(AccountingError::NotFound(_))));
}

#[test]
fn cancel_after_start_refused() {
    let f = fixture();
    let pi = Actor::User("pi1".into());
    let r = f
        .acc
        .create_reservation(&pi, NewReservation {
            project_id: "p1".into(),
            start: ts("2026-03-01T10:00:00Z"),
            end: ts("2026-03-01T10:01:00Z"),
        })
        .unwrap();
    f.clock.set(ts("2026-03-01T10:00:00Z"));
    assert_eq!(f.acc.cancel_reservation(&pi, &r.reservation_id), Err(AccountingError::AlreadyStarted));
}

#[test]
fn slots_of_different_orgs_cannot_overlap() {
    let f = fixture();
    let s = Actor::Service;
    f.acc
        .create_org(&s, NewOrganisation { org_id: Some("o2".into()), name: "two".into(), yearly_budget_ms: 1 })
        .unwrap();
    let clash = f.acc.create_slot(&s, NewSlot {
        slot_id: None,
        org_id: "o2".into(),
        start: ts("2026-03-01T11:00:00Z"),
        end: ts("2026-03-01T13:00:00Z"),
    });
    assert!(matches!(clash, Err(AccountingError::Overlap(_))));
    f.acc
        .create_slot(&s, NewSlot {
            slot_id: None,
            org_id: "o2".into(),
            start: ts("2026-03-01T12:00:00Z"),
            end: ts("2026-03-01T13:00:00Z"),
        })
        .unwrap();
}

#[test]
fn crud_integrity_and_roles() {
    let f = fixture();
    let s = Actor::Service;
    let over = f.acc.create_project(&s, NewProject {
        project_id: None,
        org_id: "o1".into(),
        name: "big".into(),
        budget_ms: 9_000_001,
    });
    assert!(matches!(over, Err(AccountingError::IntegrityViolation(_))));

    f.acc
        .create_org(&s, NewOrganisation { org_id: Some("o2".into()), name: "two".into(), yearly_budget_ms: 100 })
        .unwrap();
    f.acc
        .create_user(&s, NewUser {
            user_id: Some("m1".into()),
            username: "m1".into(),
            org_ids: BTreeSet::from(["o1".to_string()]),
            role: Role::OrgManager,
            password: None,
        })
        .unwrap();
    let mgr = Actor::User("m1".into());
    let foreign = f.acc.create_project(&mgr, NewProject {
        project_id: None,
        org_id: "o2".into(),
        name: "x".into(),
        budget_ms: 1,
    });
    assert!(matches!(foreign, Err(AccountingError::NotAuthorised(_))));
    f.acc
        .create_project(&mgr, NewProject { project_id: Some("p2".into()), org_id: "o1".into(), name: "p2".into(), budget_ms: 1 })
        .unwrap();

    // Visibility: u1 sees only p1; the manager sees both o1 projects.
    let names = |a: &Actor| -> Vec<String> {
        f.acc.list_projects(a).unwrap().into_iter().map(|p| p.project_id).collect()
    };
    assert_eq!(names(&Actor::User("u1".into())), vec!["p1"]);
    assert_eq!(names(&mgr), vec!["p1", "p2"]);

    // History blocks hard deletes.
    f.acc.report_job(&report("J-9", ReportPhase::Submitted, JobStatus::Pending, None, true)).unwrap();
    assert!(matches!(f.acc.delete_project(&s, "p1"), Err(AccountingError::IntegrityViolation(_))));
    assert!(matches!(f.acc.delete_user(&s, "u1"), Err(AccountingError::IntegrityViolation(_))));
    f.acc.delete_project(&s, "p2").unwrap();
}

#[test]
fn billing_report_sums() {
    let f = fixture();
    for (id, qpu, charge) in [("J-1", 100, false), ("J-2", 200, true), ("J-3", 300, true)] {
        f.acc.report_job(&report(id, ReportPhase::Completed, JobStatus::Ready, Some(qpu), charge)).unwrap();
    }
    let s = Actor::Service;
    let (t0, t1) = (ts("2026-03-01T00:00:00Z"), ts("2026-03-02T00:00:00Z"));
    let by_project = f.acc.billing_report(&s, &ReportScope::Project("p1".into()), t0, t1).unwrap();
    assert_eq!(by_project.job_count, 3);
    assert_eq!(by_project.total_qpu_ms, 500);
    assert_eq!(by_project.per_user["u1"].charged_qpu_ms, 500);
    let by_org = f.acc.billing_report(&s, &ReportScope::Org("o1".into()), t0, t1).unwrap();
    assert_eq!(by_org.total_qpu_ms, by_project.total_qpu_ms);

    let empty = f
        .acc
        .billing_report(&s, &ReportScope::Org("o1".into()), ts("2027-01-01T00:00:00Z"), ts("2027-02-01T00:00:00Z"))
        .unwrap();
    assert_eq!((empty.job_count, empty.total_qpu_ms, empty.reservation_ms), (0, 0, 0));
}

#[test]
fn snapshot_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("accounting.json");
    let clock: Arc<dyn crate::clock::Clock> = Arc::new(ManualClock::at_epoch());
    {
        let acc = Accounting::open(&path, clock.clone()).unwrap();
        acc.create_org(&Actor::Service, NewOrganisation { org_id: Some("o".into()), name: "o".into(), yearly_budget_ms: 5 })
            .unwrap();
    }
    let acc = Accounting::open(&path, clock).unwrap();
    assert_eq!(acc.org_snapshot("o").unwrap().yearly_budget_ms, 5);
}
