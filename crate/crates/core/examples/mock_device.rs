//! Drive the mock device in-process, then over HTTP with a fault mode on.
//!
//!     cargo run --example mock_device

use std::sync::Arc;

use qpu_gatekeeper::clock;
use qpu_gatekeeper::mock::{self, DeviceConfig, FaultMode, MockDevice, SubmissionPayload};
use qpu_gatekeeper::server::RunningServer;

#[tokio::main]
async fn main() {
    let device = MockDevice::new(
        DeviceConfig {
            queue_service_rate: 2,
            ..DeviceConfig::default()
        },
        clock::system(),
    )
    .unwrap();
    let device = Arc::new(device);

    let ids: Vec<String> = (1..=3)
        .map(|n| {
            let body = SubmissionPayload::new(n, 1000, None).to_bytes();
            device.submit("circuit", &body).unwrap()
        })
        .collect();
    println!("queued {} jobs, queue length {}", ids.len(), device.queue_len());

    // Each tick finishes up to `queue_service_rate` jobs.
    while device.queue_len() > 0 {
        println!("tick completed {:?}", device.advance());
    }
    for id in &ids {
        let view = device.status(id).unwrap();
        let first = view.measurements.as_ref().map(|m| m[0][..4].join(" "));
        println!(
            "{id}: {:?} circuits={} qpu_time_ms={:?} first shots: {}",
            view.status,
            view.num_circuits,
            view.qpu_time_ms,
            first.unwrap_or_default()
        );
    }

    let server = RunningServer::local(mock::http::router(device.clone())).await.unwrap();
    let http = reqwest::Client::new();
    let submit = || {
        http.post(server.url().join("jobs/circuit/circuit").unwrap())
            .body(SubmissionPayload::new(1, 10, None).to_bytes())
            .send()
    };
    println!("POST healthy:     {}", submit().await.unwrap().status());

    device.set_fault_mode(FaultMode::RejectAll);
    println!("POST reject_all:  {}", submit().await.unwrap().status());

    device.set_fault_mode(FaultMode::DropConnection);
    let dropped = match submit().await {
        Ok(resp) => resp.bytes().await.err().map(|e| e.to_string()),
        Err(e) => Some(e.to_string()),
    };
    println!("POST drop:        {}", dropped.unwrap_or_else(|| "completed".into()));

    device.set_fault_mode(FaultMode::None);
    println!("requests seen by the device: {}", device.request_log().len());
    server.shutdown().await;
}
