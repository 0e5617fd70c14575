//! The fairness ledger on its own: fifty clients race for a 2.5M shot-unit
//! allowance with 100k-shot jobs. Exactly twenty-five get through.
//!
//!     cargo run --example fairness_quota

use std::sync::Arc;

use qpu_gatekeeper::ledger::{Acquire, FairnessConfig, FairnessLedger};

#[tokio::main]
async fn main() {
    let ledger = Arc::new(FairnessLedger::in_memory(FairnessConfig::new(2_500_000).unwrap()));

    let handles: Vec<_> = (0..50)
        .map(|i| {
            let ledger = ledger.clone();
            tokio::spawn(async move { (i, ledger.try_acquire("alice", 100_000).await) })
        })
        .collect();

    let mut acquired = Vec::new();
    for h in handles {
        let (i, outcome) = h.await.unwrap();
        if outcome == Acquire::Acquired {
            acquired.push(i);
        }
    }
    println!("acquired: {} of 50", acquired.len());
    println!("held:     {}", ledger.read("alice").await.unwrap());

    // Another user is unaffected.
    println!("bob:      {:?}", ledger.try_acquire("bob", 100_000).await);

    // Finishing one job frees room for exactly one more.
    ledger.release("alice", 100_000).await.unwrap();
    println!("after release: {:?}", ledger.try_acquire("alice", 100_000).await);
    println!("then:          {:?}", ledger.try_acquire("alice", 100_000).await);
}
