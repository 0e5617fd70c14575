//! Exclusive reservations in the accounting service: an admin opens a
//! pre-allocated slot for an organisation, a PI books an hour inside it, and
//! for that hour only the reserving project may submit, free of charge.
//!
//!     cargo run --example reservations

use std::collections::BTreeSet;
use std::sync::Arc;

use qpu_gatekeeper::accounting::{
    Accounting, Actor, AuthoriseRequest, Membership, NewOrganisation, NewProject, NewReservation,
    NewSlot, NewUser, Role,
};
use qpu_gatekeeper::clock::{parse_ts, ManualClock};

fn main() {
    let clock = ManualClock::new(parse_ts("2026-03-01T08:00:00Z").unwrap());
    let acc = Accounting::in_memory(Arc::new(clock.clone()));
    let svc = Actor::Service;

    acc.create_org(&svc, NewOrganisation { org_id: Some("lab".into()), name: "Lab".into(), yearly_budget_ms: 50_000_000 })
        .unwrap();
    for p in ["optics", "chem"] {
        acc.create_project(&svc, NewProject { project_id: Some(p.into()), org_id: "lab".into(), name: p.into(), budget_ms: 7_200_000 })
            .unwrap();
    }
    for (id, role, project, pi) in [("pia", Role::Pi, "optics", true), ("ravi", Role::Regular, "chem", false)] {
        acc.create_user(&svc, NewUser {
            user_id: Some(id.into()),
            username: id.into(),
            org_ids: BTreeSet::from(["lab".to_string()]),
            role,
            password: None,
        })
        .unwrap();
        acc.add_member(&svc, project, Membership { user_id: id.into(), pi }).unwrap();
    }

    acc.create_slot(&svc, NewSlot {
        slot_id: None,
        org_id: "lab".into(),
        start: parse_ts("2026-03-01T10:00:00Z").unwrap(),
        end: parse_ts("2026-03-01T12:00:00Z").unwrap(),
    })
    .unwrap();

    let pia = Actor::User("pia".into());
    let outside = acc.create_reservation(&pia, NewReservation {
        project_id: "optics".into(),
        start: parse_ts("2026-03-01T13:00:00Z").unwrap(),
        end: parse_ts("2026-03-01T14:00:00Z").unwrap(),
    });
    println!("outside any slot: {}", outside.unwrap_err());

    let rsv = acc
        .create_reservation(&pia, NewReservation {
            project_id: "optics".into(),
            start: parse_ts("2026-03-01T10:00:00Z").unwrap(),
            end: parse_ts("2026-03-01T11:00:00Z").unwrap(),
        })
        .unwrap();
    let optics = acc.project_snapshot("optics").unwrap();
    println!("booked {} for {} ms; optics consumed {} of {}", rsv.reservation_id, rsv.charged_ms, optics.consumed_ms, optics.budget_ms);

    let ask = |user: &str, at: &str| {
        acc.authorise_job(&AuthoriseRequest {
            user_id: user.into(),
            project_hint: None,
            estimated_cost_ms: 1_000,
            at: Some(parse_ts(at).unwrap()),
        })
    };
    for at in ["2026-03-01T09:59:59Z", "2026-03-01T10:30:00Z", "2026-03-01T11:00:00Z"] {
        let (p, r) = (ask("pia", at), ask("ravi", at));
        println!(
            "{at}  pia: {} (charge={})  ravi: {}",
            p.reason.as_str(),
            p.charge_budget,
            r.reason.as_str()
        );
    }

    // Cancelling before the start refunds the charge.
    acc.cancel_reservation(&pia, &rsv.reservation_id).unwrap();
    println!("after cancel: optics consumed {}", acc.project_snapshot("optics").unwrap().consumed_ms);
    for tx in acc.transaction_log() {
        println!("  tx {:>2} {:?} {} {:+}", tx.seq, tx.kind, tx.reference, tx.delta_ms);
    }
}
