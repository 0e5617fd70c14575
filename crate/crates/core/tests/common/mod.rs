#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use qpu_gatekeeper::accounting::{Actor, Membership, NewOrganisation, NewProject, NewUser, Role};
use qpu_gatekeeper::clock::{parse_ts, ManualClock};
use qpu_gatekeeper::mock::SubmissionPayload;
use qpu_gatekeeper::stack::{Stack, StackConfig};

pub const PASSWORD: &str = "correct horse";

pub struct World {
    pub stack: Stack,
    pub clock: ManualClock,
    pub http: reqwest::Client,
}

impl World {
    pub fn token(&self, user: &str) -> String {
        self.stack.access_token(user).unwrap()
    }

    pub async fn submit(&self, user: &str, circuits: usize, shots: u32, project: Option<&str>) -> reqwest::Response {
        self.submit_with_token(&self.token(user), circuits, shots, project).await
    }

    pub async fn submit_with_token(&self, token: &str, circuits: usize, shots: u32, project: Option<&str>) -> reqwest::Response {
        self.http
            .post(self.stack.edge_url().join("jobs/circuit/circuit").unwrap())
            .bearer_auth(token)
            .header("content-type", "application/json")
            .body(SubmissionPayload::new(circuits, shots, project).to_bytes())
            .send()
            .await
            .unwrap()
    }

    pub fn consumed(&self, project: &str) -> u64 {
        self.stack.accounting.project_snapshot(project).unwrap().consumed_ms
    }

    pub async fn ledger(&self, user: &str) -> u64 {
        self.stack.services().ledger.read(user).await.unwrap()
    }
}

/// Stack on a manual clock at 2026-03-01T08:00Z with organisation `o1`,
/// projects `p1` and `p2`, and users:
/// `alice` (member of p1), `bob` (member of p2), `carol` (PI of p1),
/// `root` (admin), `mgr` (org manager of o1).
pub async fn world() -> World {
    world_with(|_| {}).await
}

pub async fn world_with(tweak: impl FnOnce(&mut StackConfig)) -> World {
    let clock = ManualClock::new(parse_ts("2026-03-01T08:00:00Z").unwrap());
    let mut config = StackConfig {
        clock: Arc::new(clock.clone()),
        ..StackConfig::default()
    };
    tweak(&mut config);
    let stack = Stack::start(config).await.unwrap();
    seed(&stack);
    World {
        stack,
        clock,
        http: reqwest::Client::new(),
    }
}

pub fn seed(stack: &Stack) {
    let acc = &stack.accounting;
    let s = Actor::Service;
    acc.create_org(&s, NewOrganisation { org_id: Some("o1".into()), name: "Org One".into(), yearly_budget_ms: 100_000_000 })
        .unwrap();
    for p in ["p1", "p2"] {
        acc.create_project(&s, NewProject { project_id: Some(p.into()), org_id: "o1".into(), name: p.to_uppercase(), budget_ms: 10_000_000 })
            .unwrap();
    }
    for (id, role) in [
        ("alice", Role::Regular),
        ("bob", Role::Regular),
        ("carol", Role::Pi),
        ("root", Role::Admin),
        ("mgr", Role::OrgManager),
    ] {
        acc.create_user(&s, NewUser {
            user_id: Some(id.into()),
            username: id.into(),
            org_ids: BTreeSet::from(["o1".to_string()]),
            role,
            password: Some(PASSWORD.into()),
        })
        .unwrap();
    }
    acc.add_member(&s, "p1", Membership { user_id: "alice".into(), pi: false }).unwrap();
    acc.add_member(&s, "p2", Membership { user_id: "bob".into(), pi: false }).unwrap();
    acc.add_member(&s, "p1", Membership { user_id: "carol".into(), pi: true }).unwrap();
}
