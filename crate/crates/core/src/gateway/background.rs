use std::future::Future;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::Serialize;
use tokio::sync::Notify;

use crate::clock::{iso_ms, Clock, Timestamp};

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 5,
            base_delay: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DeadLetter {
    #[serde(with = "iso_ms")]
    pub at: Timestamp,
    pub job_id: String,
    pub task: String,
    pub attempts: u32,
    pub error: String,
}

/// Runs post-submission side work off the request path, with retries, and
/// tracks how many tasks are still in flight.
pub struct Background {
    policy: RetryPolicy,
    clock: Arc<dyn Clock>,
    journal: Option<PathBuf>,
    dead: Mutex<Vec<DeadLetter>>,
    in_flight: AtomicUsize,
    dead_count: AtomicU64,
    idle: Notify,
}

impl std::fmt::Debug for Background {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Background")
            .field("in_flight", &self.in_flight.load(Ordering::Relaxed))
            .finish_non_exhaustive()
    }
}

struct InFlight(Arc<Background>);

impl Drop for InFlight {
    fn drop(&mut self) {
        if self.0.in_flight.fetch_sub(1, Ordering::AcqRel) == 1 {
            self.0.idle.notify_waiters();
        }
    }
}

impl Background {
    pub fn new(policy: RetryPolicy, clock: Arc<dyn Clock>, journal: Option<PathBuf>) -> Self {
        Self {
            policy,
            clock,
            journal,
            dead: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            dead_count: AtomicU64::new(0),
            idle: Notify::new(),
        }
    }

    pub fn spawn<F>(self: &Arc<Self>, fut: F)
    where
        F: Future<Output = ()> + Send + 'static,
    {
        self.in_flight.fetch_add(1, Ordering::AcqRel);
        let guard = InFlight(self.clone());
        tokio::spawn(async move {
            let _guard = guard;
            fut.await;
        });
    }

    /// Calls `op` until it succeeds or the attempts run out; the final
    /// failure goes to the dead-letter journal. Returns the success value.
    pub async fn retry<T, E, F, Fut>(&self, job_id: &str, task: &str, mut op: F) -> Option<T>
    where
        E: std::fmt::Display,
        F: FnMut() -> Fut,
        Fut: Future<Output = Result<T, E>>,
    {
        let mut delay = self.policy.base_delay;
        for attempt in 1..=self.policy.attempts {
            match op().await {
                Ok(v) => return Some(v),
                Err(e) if attempt == self.policy.attempts => {
                    self.dead_letter(DeadLetter {
                        at: self.clock.now(),
                        job_id: job_id.to_string(),
                        task: task.to_string(),
                        attempts: attempt,
                        error: e.to_string(),
                    });
                }
                Err(e) => {
                    tracing::debug!(job_id, task, attempt, error = %e, "background task failed; retrying");
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                }
            }
        }
        None
    }

    fn dead_letter(&self, letter: DeadLetter) {
        tracing::warn!(job_id = %letter.job_id, task = %letter.task, error = %letter.error, "background task dead-lettered");
        self.dead_count.fetch_add(1, Ordering::Relaxed);
        if let Some(path) = &self.journal {
            let line = serde_json::to_string(&letter).expect("serializable");
            let written = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                tracing::error!(path = %path.display(), error = %e, "cannot append to dead-letter journal");
            }
        }
        self.dead.lock().push(letter);
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.dead.lock().clone()
    }

    pub fn dead_letter_count(&self) -> u64 {
        self.dead_count.load(Ordering::Relaxed)
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::Acquire)
    }

    /// Waits until no background task is running.
    pub async fn flush(&self) {
        loop {
            let notified = self.idle.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.in_flight() == 0 {
                return;
            }
            notified.await;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn bg(journal: Option<PathBuf>) -> Arc<Background> {
        Arc::new(Background::new(
            RetryPolicy { attempts: 5, base_delay: Duration::from_millis(1) },
            Arc::new(ManualClock::at_epoch()),
            journal,
        ))
    }

    #[tokio::test]
    async fn retries_until_success() {
        let b = bg(None);
        let calls = AtomicUsize::new(0);
        let out = b
            .retry("J-1", "t", || async {
                let n = calls.fetch_add(1, Ordering::SeqCst);
                if n < 3 { Err("boom") } else { Ok(n) }
            })
            .await;
        assert_eq!(out, Some(3));
        assert_eq!(b.dead_letter_count(), 0);
    }

    #[tokio::test]
    async fn gives_up_after_five_and_journals() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dead.jsonl");
        let b = bg(Some(path.clone()));
        let calls = AtomicUsize::new(0);
        let out: Option<()> = b
            .retry("J-2", "upload_circuit", || async {
                calls.fetch_add(1, Ordering::SeqCst);
                Err("down")
            })
            .await;
        assert_eq!(out, None);
        assert_eq!(calls.load(Ordering::SeqCst), 5);
        let journal = std::fs::read_to_string(path).unwrap();
        let entry: serde_json::Value = serde_json::from_str(journal.lines().next().unwrap()).unwrap();
        assert_eq!(entry["job_id"], "J-2");
        assert_eq!(entry["attempts"], 5);
    }

    #[tokio::test]
    async fn flush_waits_for_tasks() {
        let b = bg(None);
        let done = Arc::new(AtomicUsize::new(0));
        for _ in 0..10 {
            let done = done.clone();
            b.spawn(async move {
                tokio::time::sleep(Duration::from_millis(5)).await;
                done.fetch_add(1, Ordering::SeqCst);
            });
        }
        b.flush().await;
        assert_eq!(done.load(Ordering::SeqCst), 10);
        assert_eq!(b.in_flight(), 0);
    }
}
