//! Everything on loopback: gateway, auth, accounting, artifact store,
//! reporter and a mock device working through its queue on a timer.
//!
//! An admin sets up an organisation over the HTTP API, a user logs in and
//! submits through the gateway exactly as they would to the device, and the
//! reporter settles the job once it finishes.
//!
//!     cargo run --example full_stack

use std::collections::BTreeSet;
use std::time::Duration;

use qpu_gatekeeper::accounting::{Actor, NewUser, Role};
use qpu_gatekeeper::mock::SubmissionPayload;
use qpu_gatekeeper::reporter::ReporterConfig;
use qpu_gatekeeper::stack::{Stack, StackConfig};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let stack = Stack::start(StackConfig {
        spawn_reporter: true,
        auto_advance: Some(Duration::from_millis(100)),
        reporter: ReporterConfig {
            interval: Duration::from_millis(100),
            ..ReporterConfig::default()
        },
        ..StackConfig::default()
    })
    .await?;
    println!("gateway at {}", stack.edge_url());

    stack.accounting.create_user(&Actor::Service, NewUser {
        user_id: Some("root".into()),
        username: "root".into(),
        org_ids: BTreeSet::new(),
        role: Role::Admin,
        password: Some("admin-pw".into()),
    })?;

    let http = reqwest::Client::new();
    let login = |user: &'static str, password: &'static str| {
        let url = stack.auth_url().join("token").unwrap();
        let http = http.clone();
        async move {
            let v: Value = http
                .post(url)
                .json(&json!({"username": user, "password": password}))
                .send()
                .await?
                .error_for_status()?
                .json()
                .await?;
            anyhow::Ok(v["access_token"].as_str().unwrap_or_default().to_string())
        }
    };
    let admin = login("root", "admin-pw").await?;

    let api = stack.api_url();
    for (path, body) in [
        ("orgs", json!({"org_id": "lab", "name": "Lab", "yearly_budget_ms": 36_000_000})),
        ("projects", json!({"project_id": "optics", "org_id": "lab", "name": "Optics", "budget_ms": 3_600_000})),
        ("users", json!({"user_id": "ada", "username": "ada", "role": "regular", "org_ids": ["lab"], "password": "pw"})),
        ("projects/optics/members", json!({"user_id": "ada"})),
    ] {
        let resp = http.post(api.join(path)?).bearer_auth(&admin).json(&body).send().await?;
        println!("POST /api/{path:<24} {}", resp.status());
    }

    let token = login("ada", "pw").await?;
    let submitted: Value = http
        .post(stack.edge_url().join("jobs/circuit/circuit")?)
        .bearer_auth(&token)
        .body(SubmissionPayload::new(10, 1_000, Some("optics")).to_bytes())
        .send()
        .await?
        .error_for_status()?
        .json()
        .await?;
    let job_id = submitted["id"].as_str().unwrap().to_string();
    println!("submitted {job_id}");

    loop {
        let view: Value = http
            .get(stack.edge_url().join(&format!("jobs/{job_id}"))?)
            .bearer_auth(&token)
            .send()
            .await?
            .json()
            .await?;
        println!("  status {}", view["status"]);
        if view["status"] == "ready" || view["status"] == "failed" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }

    // Give the reporter a moment to upload, report and release.
    let record = loop {
        let rec: Value = http
            .get(api.join(&format!("jobs/{job_id}"))?)
            .bearer_auth(&admin)
            .send()
            .await?
            .json()
            .await?;
        if rec["completed_reported"] == true {
            break rec;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    println!("ledger record: qpu_time_ms={} result_url={}", record["qpu_time_ms"], record["result_url"]);
    let listing: Value = http.get(record["result_url"].as_str().unwrap()).send().await?.json().await?;
    println!("artifacts: {}", listing);
    let optics = stack.accounting.project_snapshot("optics").unwrap();
    println!("optics consumed {} of {} ms", optics.consumed_ms, optics.budget_ms);

    stack.shutdown().await;
    Ok(())
}
