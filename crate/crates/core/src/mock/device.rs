//! Deterministic stand-in for the upstream quantum device.
//!
//! Jobs enter a single FIFO queue and only move when [`MockDevice::advance`]
//! is called (or the wall-clock driver calls it). Each tick completes up to
//! `queue_service_rate` jobs from the head of the queue and marks the next one
//! as running. Results are uniformly random bitstrings drawn from a
//! per-job stream derived from `rng_seed`, so a fixed seed reproduces the
//! whole device trace.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{CalibrationView, JobView, SubmissionPayload, TimelineEntry};
use crate::clock::{Clock, Timestamp};
use crate::plugin::JobStatus;

/// Default per-shot QPU time: 2.5 million shots in about five minutes.
pub const DEFAULT_T_SHOT_MS: f64 = 0.12;

const DEFAULT_QUBITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    #[default]
    None,
    /// Every device endpoint answers 503.
    RejectAll,
    /// Responses are aborted mid-body.
    DropConnection,
    /// Responses are delayed by `slow_delay_ms`.
    Slow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub t_shot_ms: f64,
    pub queue_service_rate: u32,
    pub fault_mode: FaultMode,
    pub rng_seed: u64,
    pub slow_delay_ms: u64,
    /// If set, device endpoints require `Authorization: Bearer <token>`.
    pub service_token: Option<String>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            t_shot_ms: DEFAULT_T_SHOT_MS,
            queue_service_rate: 1,
            fault_mode: FaultMode::None,
            rng_seed: 7,
            slow_delay_ms: 200,
            service_token: None,
        }
    }
}

impl DeviceConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_shot_ms > 0.0 && self.t_shot_ms.is_finite()) {
            return Err(format!("t_shot_ms must be positive, got {}", self.t_shot_ms));
        }
        if self.queue_service_rate == 0 {
            return Err("queue_service_rate must be at least 1".into());
        }
        Ok(())
    }
}

/// `round(num_circuits * shots * t_shot_ms)`.
pub fn qpu_time_ms(num_circuits: u32, shots: u32, t_shot_ms: f64) -> u64 {
    (f64::from(num_circuits) * f64::from(shots) * t_shot_ms).round() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockJob {
    pub job_id: String,
    pub job_type: String,
    pub circuits: Vec<serde_json::Value>,
    pub shots: u32,
    pub state: JobStatus,
    pub enqueue_position: u64,
    pub qpu_time_ms: Option<u64>,
    pub results: Option<Vec<Vec<String>>>,
    pub created_at: Timestamp,
    pub timeline: Vec<TimelineEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockCalibration {
    pub timestamp: Timestamp,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordedRequest {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SubmitError {
    #[error("malformed payload: {0}")]
    Malformed(String),
}

#[derive(Debug)]
struct DeviceState {
    config: DeviceConfig,
    jobs: HashMap<String, MockJob>,
    queue: VecDeque<String>,
    next_seq: u64,
    calibration: MockCalibration,
    fail_next: u32,
    requests: Vec<RecordedRequest>,
}

#[derive(Debug)]
pub struct MockDevice {
    state: Mutex<DeviceState>,
    clock: Arc<dyn Clock>,
}

pub fn default_calibration_metrics() -> BTreeMap<String, f64> {
    let mut metrics = BTreeMap::new();
    for q in 1..=DEFAULT_QUBITS {
        let qf = q as f64;
        metrics.insert(format!("QB{q}.t1_us"), 40.0 + qf);
        metrics.insert(format!("QB{q}.t2_us"), 20.0 + qf / 2.0);
        metrics.insert(format!("QB{q}.fidelity_1q"), 0.999 - qf / 10_000.0);
        metrics.insert(format!("QB{q}.readout_fidelity"), 0.97 - qf / 1_000.0);
    }
    metrics.insert("CZ.QB1-QB3.fidelity_2q".into(), 0.985);
    metrics.insert("CZ.QB2-QB3.fidelity_2q".into(), 0.981);
    metrics
}

impl MockDevice {
    pub fn new(config: DeviceConfig, clock: Arc<dyn Clock>) -> Result<Self, String> {
        config.validate()?;
        let calibration = MockCalibration {
            timestamp: clock.now(),
            metrics: default_calibration_metrics(),
        };
        Ok(Self {
            state: Mutex::new(DeviceState {
                config,
                jobs: HashMap::new(),
                queue: VecDeque::new(),
                next_seq: 1,
                calibration,
                fail_next: 0,
                requests: Vec::new(),
            }),
            clock,
        })
    }

    pub fn config(&self) -> DeviceConfig {
        self.state.lock().config.clone()
    }

    pub fn set_fault_mode(&self, mode: FaultMode) {
        self.state.lock().config.fault_mode = mode;
    }

    pub fn fault_mode(&self) -> FaultMode {
        self.state.lock().config.fault_mode
    }

    pub fn set_slow_delay(&self, delay: Duration) {
        self.state.lock().config.slow_delay_ms = delay.as_millis() as u64;
    }

    /// The next `n` jobs to complete end in `failed` with zero QPU time.
    pub fn fail_next_jobs(&self, n: u32) {
        self.state.lock().fail_next = n;
    }

    pub fn submit(&self, job_type: &str, body: &[u8]) -> Result<String, SubmitError> {
        let payload = SubmissionPayload::parse(body).map_err(SubmitError::Malformed)?;
        let now = self.clock.now();
        let mut st = self.state.lock();
        let seq = st.next_seq;
        st.next_seq += 1;
        let job_id = format!("J-{seq}");
        let job = MockJob {
            job_id: job_id.clone(),
            job_type: job_type.to_string(),
            circuits: payload.circuits,
            shots: payload.shots,
            state: JobStatus::Pending,
            enqueue_position: seq,
            qpu_time_ms: None,
            results: None,
            created_at: now,
            timeline: vec![TimelineEntry {
                status: "received".into(),
                timestamp: now,
            }],
        };
        st.jobs.insert(job_id.clone(), job);
        st.queue.push_back(job_id.clone());
        Ok(job_id)
    }

    pub fn job(&self, job_id: &str) -> Option<MockJob> {
        self.state.lock().jobs.get(job_id).cloned()
    }

    pub fn status(&self, job_id: &str) -> Option<JobView> {
        let st = self.state.lock();
        let job = st.jobs.get(job_id)?;
        let queue_position = (job.state == JobStatus::Pending)
            .then(|| st.queue.iter().position(|id| id == job_id))
            .flatten()
            .map(|p| p as u64);
        Some(JobView {
            id: job.job_id.clone(),
            job_type: job.job_type.clone(),
            status: job.state,
            num_circuits: job.circuits.len() as u32,
            shots: job.shots,
            created_at: job.created_at,
            queue_position,
            qpu_time_ms: job.qpu_time_ms,
            measurements: job.results.clone(),
            timeline: job.timeline.clone(),
        })
    }

    /// Runs one scheduling tick. Returns the ids completed in this tick, in
    /// completion order.
    pub fn advance(&self) -> Vec<String> {
        let now = self.clock.now();
        let mut st = self.state.lock();
        let rate = st.config.queue_service_rate;
        let mut completed = Vec::new();
        for _ in 0..rate {
            let Some(id) = st.queue.pop_front() else { break };
            let fail = st.fail_next > 0;
            if fail {
                st.fail_next -= 1;
            }
            let t_shot = st.config.t_shot_ms;
            let seed = st.config.rng_seed;
            let job = st.jobs.get_mut(&id).expect("queued job exists");
            if job.state == JobStatus::Pending {
                job.timeline.push(TimelineEntry {
                    status: "running".into(),
                    timestamp: now,
                });
            }
            if fail {
                job.state = JobStatus::Failed;
                job.qpu_time_ms = Some(0);
                job.timeline.push(TimelineEntry {
                    status: "failed".into(),
                    timestamp: now,
                });
            } else {
                job.results = Some(random_results(seed, job));
                job.qpu_time_ms = Some(qpu_time_ms(
                    job.circuits.len() as u32,
                    job.shots,
                    t_shot,
                ));
                job.state = JobStatus::Ready;
                job.timeline.push(TimelineEntry {
                    status: "ready".into(),
                    timestamp: now,
                });
            }
            completed.push(id);
        }
        if let Some(head) = st.queue.front().cloned() {
            let job = st.jobs.get_mut(&head).expect("queued job exists");
            if job.state == JobStatus::Pending {
                job.state = JobStatus::Running;
                job.timeline.push(TimelineEntry {
                    status: "running".into(),
                    timestamp: now,
                });
            }
        }
        completed
    }

    /// Ticks until the queue is empty.
    pub fn drain(&self) -> Vec<String> {
        let mut all = Vec::new();
        loop {
            let done = self.advance();
            if done.is_empty() {
                return all;
            }
            all.extend(done);
        }
    }

    pub fn queue_len(&self) -> usize {
        self.state.lock().queue.len()
    }

    pub fn calibration_latest(&self) -> MockCalibration {
        self.state.lock().calibration.clone()
    }

    pub fn calibration_view(&self) -> CalibrationView {
        let cal = self.calibration_latest();
        CalibrationView {
            timestamp: cal.timestamp,
            metrics: cal.metrics,
        }
    }

    /// Replaces the metrics; the timestamp strictly increases.
    pub fn calibration_set(&self, metrics: BTreeMap<String, f64>) -> MockCalibration {
        let now = self.clock.now();
        let mut st = self.state.lock();
        let floor = st.calibration.timestamp + chrono::Duration::milliseconds(1);
        st.calibration = MockCalibration {
            timestamp: now.max(floor),
            metrics,
        };
        st.calibration.clone()
    }

    pub fn record_request(&self, req: RecordedRequest) {
        self.state.lock().requests.push(req);
    }

    /// Every request the device has seen, in arrival order.
    pub fn request_log(&self) -> Vec<RecordedRequest> {
        self.state.lock().requests.clone()
    }

    /// Number of submission requests that reached the device.
    pub fn submission_count(&self) -> usize {
        self.state
            .lock()
            .requests
            .iter()
            .filter(|r| r.method == "POST" && r.path.starts_with("/jobs/"))
            .count()
    }

    /// Starts a background task that ticks every `period`.
    pub fn spawn_auto_advance(self: &Arc<Self>, period: Duration) -> tokio::task::JoinHandle<()> {
        let device = Arc::clone(self);
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            loop {
                interval.tick().await;
                device.advance();
            }
        })
    }
}

fn circuit_width(circuit: &serde_json::Value) -> usize {
    circuit
        .get("num_qubits")
        .and_then(|v| v.as_u64())
        .map(|n| n.clamp(1, 64) as usize)
        .unwrap_or(DEFAULT_QUBITS)
}

fn random_results(seed: u64, job: &MockJob) -> Vec<Vec<String>> {
    let stream = seed ^ job.enqueue_position.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    job.circuits
        .iter()
        .map(|circuit| {
            let width = circuit_width(circuit);
            (0..job.shots)
                .map(|_| {
                    (0..width)
                        .map(|_| if rng.gen::<bool>() { '1' } else { '0' })
                        .collect()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn device(seed: u64) -> (MockDevice, ManualClock) {
        let clock = ManualClock::at_epoch();
        let cfg = DeviceConfig {
            rng_seed: seed,
            ..DeviceConfig::default()
        };
        (MockDevice::new(cfg, Arc::new(clock.clone())).unwrap(), clock)
    }

    fn payload(c: usize, shots: u32) -> Vec<u8> {
        SubmissionPayload::new(c, shots, None).to_bytes()
    }

    #[test]
    fn qpu_time_arithmetic() {
        assert_eq!(qpu_time_ms(1, 1000, DEFAULT_T_SHOT_MS), 120);
        assert_eq!(qpu_time_ms(5, 1000, DEFAULT_T_SHOT_MS), 600);
        // 2.5M shots at the default rate is five minutes.
        assert_eq!(qpu_time_ms(1, 2_500_000, DEFAULT_T_SHOT_MS), 300_000);
    }

    #[test]
    fn submit_assigns_sequential_ids_pending() {
        let (dev, _) = device(1);
        assert_eq!(dev.submit("circuit", &payload(1, 1000)).unwrap(), "J-1");
        assert_eq!(dev.submit("circuit", &payload(1, 1000)).unwrap(), "J-2");
        assert_eq!(dev.status("J-1").unwrap().status, JobStatus::Pending);
        assert_eq!(dev.status("J-2").unwrap().queue_position, Some(1));
    }

    #[test]
    fn zero_circuits_rejected() {
        let (dev, _) = device(1);
        let err = dev
            .submit("circuit", br#"{"circuits":[],"shots":5}"#)
            .unwrap_err();
        assert!(matches!(err, SubmitError::Malformed(_)));
    }

    #[test]
    fn unknown_job_is_none() {
        let (dev, _) = device(1);
        assert!(dev.status("J-999").is_none());
    }

    #[test]
    fn ready_job_has_full_results_and_time() {
        let (dev, _) = device(3);
        let id = dev.submit("circuit", &payload(5, 1000)).unwrap();
        assert_eq!(dev.advance(), vec![id.clone()]);
        let view = dev.status(&id).unwrap();
        assert_eq!(view.status, JobStatus::Ready);
        assert_eq!(view.qpu_time_ms, Some(600));
        let m = view.measurements.unwrap();
        assert_eq!(m.len(), 5);
        assert!(m.iter().all(|c| c.len() == 1000));
        assert!(m[0].iter().all(|b| b.len() == 5 && b.chars().all(|c| c == '0' || c == '1')));
    }

    #[test]
    fn fifo_one_completion_per_tick() {
        let (dev, _) = device(1);
        let ids: Vec<_> = (0..4)
            .map(|_| dev.submit("circuit", &payload(1, 10)).unwrap())
            .collect();
        let mut order = Vec::new();
        for _ in 0..4 {
            let done = dev.advance();
            assert_eq!(done.len(), 1);
            order.extend(done);
        }
        assert_eq!(order, ids);
        assert!(dev.advance().is_empty());
    }

    #[test]
    fn head_becomes_running_after_tick() {
        let (dev, _) = device(1);
        dev.submit("circuit", &payload(1, 10)).unwrap();
        dev.submit("circuit", &payload(1, 10)).unwrap();
        dev.advance();
        assert_eq!(dev.status("J-2").unwrap().status, JobStatus::Running);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = |seed| {
            let (dev, clock) = device(seed);
            for i in 0..3 {
                dev.submit("circuit", &payload(2, 50 + i)).unwrap();
                clock.advance_ms(5);
            }
            dev.drain();
            (1..=3)
                .map(|i| serde_json::to_vec(&dev.status(&format!("J-{i}")).unwrap()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn fail_next_produces_failed_zero_time() {
        let (dev, _) = device(1);
        let id = dev.submit("circuit", &payload(1, 10)).unwrap();
        dev.fail_next_jobs(1);
        dev.advance();
        let view = dev.status(&id).unwrap();
        assert_eq!(view.status, JobStatus::Failed);
        assert_eq!(view.qpu_time_ms, Some(0));
        assert!(view.measurements.is_none());
    }

    #[test]
    fn calibration_timestamps_strictly_increase() {
        let (dev, _) = device(1);
        let first = dev.calibration_latest();
        let mut m = BTreeMap::new();
        m.insert("x".to_string(), 1.0);
        let second = dev.calibration_set(m.clone());
        let third = dev.calibration_set(m.clone());
        assert!(second.timestamp > first.timestamp);
        assert!(third.timestamp > second.timestamp);
        assert_eq!(dev.calibration_latest().metrics, m);
    }

    #[test]
    fn default_calibration_timestamp_is_device_start() {
        let (dev, clock) = device(1);
        assert_eq!(dev.calibration_latest().timestamp, clock.now());
        assert_eq!(dev.calibration_latest().metrics, default_calibration_metrics());
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = DeviceConfig {
            t_shot_ms: 0.0,
            ..DeviceConfig::default()
        };
        assert!(MockDevice::new(cfg, crate::clock::system()).is_err());
    }
}
