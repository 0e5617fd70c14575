//! The gateway answers passthrough requests with the device's own bytes and
//! status. Compare a few reads made directly against the device and through
//! the gateway.
//!
//!     cargo run --example transparent_proxy

use std::collections::BTreeSet;

use qpu_gatekeeper::accounting::{Actor, Membership, NewOrganisation, NewProject, NewUser, Role};
use qpu_gatekeeper::mock::SubmissionPayload;
use qpu_gatekeeper::stack::{Stack, StackConfig};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let stack = Stack::start(StackConfig::default()).await?;
    let acc = &stack.accounting;
    acc.create_org(&Actor::Service, NewOrganisation { org_id: Some("o".into()), name: "O".into(), yearly_budget_ms: 10_000_000 })?;
    acc.create_project(&Actor::Service, NewProject { project_id: Some("p".into()), org_id: "o".into(), name: "P".into(), budget_ms: 1_000_000 })?;
    acc.create_user(&Actor::Service, NewUser {
        user_id: Some("u".into()),
        username: "u".into(),
        org_ids: BTreeSet::from(["o".to_string()]),
        role: Role::Regular,
        password: None,
    })?;
    acc.add_member(&Actor::Service, "p", Membership { user_id: "u".into(), pi: false })?;
    let token = stack.access_token("u")?;

    let http = reqwest::Client::new();
    let body = SubmissionPayload::new(2, 100, None).to_bytes();
    let via_gateway = http
        .post(stack.edge_url().join("jobs/circuit/circuit")?)
        .bearer_auth(&token)
        .body(body)
        .send()
        .await?;
    println!("submit through gateway: {} {}", via_gateway.status(), via_gateway.text().await?);
    stack.device.drain();

    for path in ["jobs/J-1", "jobs/J-404", "calibration/latest", "health"] {
        let direct = http
            .get(stack.device_url().join(path)?)
            .bearer_auth(&stack.service_token)
            .send()
            .await?;
        let proxied = http.get(stack.edge_url().join(path)?).bearer_auth(&token).send().await?;
        let (ds, ps) = (direct.status(), proxied.status());
        let (db, pb) = (direct.bytes().await?, proxied.bytes().await?);
        println!("GET /{path:<20} device {ds} gateway {ps}  {} bytes, identical: {}", db.len(), db == pb);
    }

    // Routes the device has but the gateway never exposes.
    let blocked = http.post(stack.edge_url().join("fault")?).bearer_auth(&token).body("{}").send().await?;
    println!("POST /fault through gateway: {}", blocked.status());
    let unknown = http.get(stack.edge_url().join("admin/secrets")?).bearer_auth(&token).send().await?;
    println!("GET /admin/secrets through gateway: {}", unknown.status());

    stack.shutdown().await;
    Ok(())
}
