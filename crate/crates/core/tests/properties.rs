use std::collections::BTreeSet;
use std::sync::Arc;

use axum::http::Method;
use proptest::prelude::*;
use qpu_gatekeeper::accounting::{
    Accounting, Actor, AuthoriseRequest, Membership, NewOrganisation, NewProject, NewUser, Role,
};
use qpu_gatekeeper::clock::{parse_ts, Clock, ManualClock};
use qpu_gatekeeper::gateway::{RouteKind, RouteRule};
use qpu_gatekeeper::ledger::{Acquire, FairnessConfig, FairnessLedger};
use qpu_gatekeeper::mock::qpu_time_ms;
use qpu_gatekeeper::plugin::{AuthorizationReason, JobReport, JobStatus, ReportPhase};

#[derive(Debug, Clone)]
enum Op {
    Acquire(u8, u64),
    Release(u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..3, 1u64..400_000).prop_map(|(u, n)| Op::Acquire(u, n)),
        (0u8..3).prop_map(Op::Release),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Held quota always equals the sum of live acquisitions and never exceeds S_max.
    #[test]
    fn ledger_matches_model(ops in prop::collection::vec(op(), 1..80)) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        rt.block_on(async {
            let s_max = 1_000_000;
            let ledger = FairnessLedger::in_memory(FairnessConfig::new(s_max).unwrap());
            let mut live: Vec<Vec<u64>> = vec![Vec::new(); 3];
            for op in ops {
                match op {
                    Op::Acquire(u, n) => {
                        let user = format!("u{u}");
                        let held: u64 = live[u as usize].iter().sum();
                        let got = ledger.try_acquire(&user, n).await;
                        prop_assert_eq!(got == Acquire::Acquired, held + n <= s_max);
                        if got == Acquire::Acquired {
                            live[u as usize].push(n);
                        }
                    }
                    Op::Release(u) => {
                        if let Some(n) = live[u as usize].pop() {
                            ledger.release(&format!("u{u}"), n).await.unwrap();
                        }
                    }
                }
                for (u, jobs) in live.iter().enumerate() {
                    let read = ledger.read(&format!("u{u}")).await.unwrap();
                    prop_assert_eq!(read, jobs.iter().sum::<u64>());
                    prop_assert!(read <= s_max);
                }
            }
            Ok(())
        })?;
    }

    /// A path built from a pattern matches it and yields the substituted values.
    #[test]
    fn route_placeholders_round_trip(
        fixed in prop::collection::vec("[a-z]{1,8}", 1..4),
        values in prop::collection::vec("[A-Za-z0-9-]{1,12}", 1..4),
    ) {
        let mut pattern = String::new();
        let mut path = String::new();
        for (i, (f, v)) in fixed.iter().zip(&values).enumerate() {
            pattern.push_str(&format!("/{f}/{{p{i}}}"));
            path.push_str(&format!("/{f}/{v}"));
        }
        let rule = RouteRule::new(Method::GET, &pattern, RouteKind::Passthrough, &["regular"]);
        let params = rule.matches(&Method::GET, &path).expect("matches");
        for (i, v) in values.iter().take(fixed.len()).enumerate() {
            prop_assert_eq!(&params[&format!("p{i}")], v);
        }
        prop_assert!(rule.matches(&Method::POST, &path).is_none());
        let longer = format!("{path}/extra");
        prop_assert!(rule.matches(&Method::GET, &longer).is_none());
    }

    /// Without reservations the verdict is a strict over-draw test on the estimate.
    #[test]
    fn budget_check_is_strict(budget in 1u64..1_000_000, used in 0u64..1_000_000, estimate in 0u64..1_000_000) {
        let clock = ManualClock::new(parse_ts("2026-02-01T00:00:00Z").unwrap());
        let acc = Accounting::in_memory(Arc::new(clock.clone()));
        let s = Actor::Service;
        acc.create_org(&s, NewOrganisation { org_id: Some("o".into()), name: "o".into(), yearly_budget_ms: 10_000_000 }).unwrap();
        acc.create_project(&s, NewProject { project_id: Some("p".into()), org_id: "o".into(), name: "p".into(), budget_ms: budget }).unwrap();
        acc.create_user(&s, NewUser {
            user_id: Some("u".into()),
            username: "u".into(),
            org_ids: BTreeSet::from(["o".to_string()]),
            role: Role::Regular,
            password: None,
        }).unwrap();
        acc.add_member(&s, "p", Membership { user_id: "u".into(), pi: false }).unwrap();
        let mut report = JobReport {
            job_id: "j".into(),
            phase: ReportPhase::Submitted,
            status: JobStatus::Pending,
            qpu_time_ms: None,
            user_id: "u".into(),
            project_id: "p".into(),
            num_circuits: 1,
            shots: 1,
            charge_budget: true,
            submitted_at: clock.now(),
            result_url: None,
        };
        acc.report_job(&report).unwrap();
        report.phase = ReportPhase::Completed;
        report.status = JobStatus::Ready;
        report.qpu_time_ms = Some(used);
        acc.report_job(&report).unwrap();

        let consumed = acc.project_snapshot("p").unwrap().consumed_ms;
        prop_assert_eq!(consumed, used.min(budget));
        let verdict = acc.authorise_job(&AuthoriseRequest { user_id: "u".into(), project_hint: None, estimated_cost_ms: estimate, at: None });
        prop_assert!(verdict.is_consistent());
        if consumed + estimate > budget {
            prop_assert_eq!(verdict.reason, AuthorizationReason::BudgetExhausted);
        } else {
            prop_assert_eq!(verdict.reason, AuthorizationReason::Approved);
            prop_assert!(verdict.charge_budget);
        }
    }

    #[test]
    fn qpu_time_is_monotone(c in 1u32..200, s in 1u32..100_000) {
        let t = qpu_time_ms(c, s, 0.12);
        prop_assert!(qpu_time_ms(c + 1, s, 0.12) >= t);
        prop_assert!(qpu_time_ms(c, s + 1, 0.12) >= t);
        prop_assert!((t as f64 - f64::from(c) * f64::from(s) * 0.12).abs() <= 0.5);
    }
}
