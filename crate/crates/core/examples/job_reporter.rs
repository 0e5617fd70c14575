//! The job reporter settling finished jobs, with a simulated crash in the
//! middle of one of them. The next cycle picks the job up again and the end
//! state is the same as if nothing had happened: one charge, one release,
//! artifacts present, row gone.
//!
//!     cargo run --example job_reporter

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use qpu_gatekeeper::accounting::{Actor, Membership, NewOrganisation, NewProject, NewUser, Role};
use qpu_gatekeeper::mock::SubmissionPayload;
use qpu_gatekeeper::reporter::{Reporter, ReporterConfig, ReporterStep};
use qpu_gatekeeper::stack::{Stack, StackConfig};
use qpu_gatekeeper::store::ArtifactStore;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let stack = Stack::start(StackConfig::default()).await?;
    let svc = Actor::Service;
    stack.accounting.create_org(&svc, NewOrganisation { org_id: Some("o".into()), name: "O".into(), yearly_budget_ms: 10_000_000 })?;
    stack.accounting.create_project(&svc, NewProject { project_id: Some("p".into()), org_id: "o".into(), name: "P".into(), budget_ms: 1_000_000 })?;
    stack.accounting.create_user(&svc, NewUser {
        user_id: Some("eve".into()),
        username: "eve".into(),
        org_ids: BTreeSet::from(["o".to_string()]),
        role: Role::Regular,
        password: None,
    })?;
    stack.accounting.add_member(&svc, "p", Membership { user_id: "eve".into(), pi: false })?;

    let token = stack.access_token("eve")?;
    let http = reqwest::Client::new();
    for _ in 0..3 {
        http.post(stack.edge_url().join("jobs/circuit/circuit")?)
            .bearer_auth(&token)
            .body(SubmissionPayload::new(4, 500, None).to_bytes())
            .send()
            .await?
            .error_for_status()?;
    }
    stack.gateway.flush_background().await;
    let ledger = stack.services().ledger.clone();
    println!("held before completion: {}", ledger.read("eve").await.unwrap());

    stack.device.drain();

    // Crash J-2 once, right before the quota release.
    let fired = Arc::new(AtomicBool::new(false));
    let hook = {
        let fired = fired.clone();
        Arc::new(move |job_id: &str, step: ReporterStep| {
            job_id == "J-2" && step == ReporterStep::ReleaseQuota && !fired.swap(true, Ordering::SeqCst)
        })
    };
    let reporter = Reporter::new(stack.services().clone(), ReporterConfig::default()).with_crash_hook(hook);

    let first = reporter.run_cycle().await;
    println!("cycle 1: {first:?}");
    println!("  rows left: {:?}", stack.services().active.snapshot().iter().map(|r| (&r.job_id, r.progress)).collect::<Vec<_>>());
    println!("  held: {}  consumed: {}", ledger.read("eve").await.unwrap(), stack.accounting.project_snapshot("p").unwrap().consumed_ms);

    let second = reporter.run_cycle().await;
    println!("cycle 2: {second:?}");
    println!("  rows left: {}", stack.services().active.len());
    println!("  held: {}  consumed: {}", ledger.read("eve").await.unwrap(), stack.accounting.project_snapshot("p").unwrap().consumed_ms);
    println!("  J-2 artifacts: {:?}", stack.store.list("J-2").await?);

    stack.shutdown().await;
    Ok(())
}
