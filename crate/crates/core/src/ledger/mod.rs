//! Per-user outstanding-shot accounting.
//!
//! For every user the ledger tracks `sum(num_circuits_j * shots_j)` over the
//! user's non-terminal jobs and refuses any submission that would push the
//! sum above `s_max`. The bound includes equality: a user may sit exactly at
//! `s_max`.
//!
//! Counters live in a [`CounterStore`]. The store being unreachable is
//! reported as [`Acquire::StoreUnavailable`]; the gateway then admits the job
//! (fail-open) without holding quota for it.

mod memory;
mod resp;

use std::sync::Arc;

use async_trait::async_trait;

pub use memory::MemoryCounterStore;
pub use resp::RespCounterStore;

/// 2.5 million shot-units.
pub const DEFAULT_S_MAX: u64 = 2_500_000;

/// Roughly five minutes of QPU time at the default shot duration.
const S_MAX_TARGET_QPU_MS: f64 = 300_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("counter store unavailable")]
pub struct StoreUnavailable;

/// Atomic integer counters keyed by string.
#[async_trait]
pub trait CounterStore: Send + Sync {
    /// Adds `delta` if the result stays `<= ceiling`. Returns the new value
    /// when applied, `None` when it would exceed the ceiling.
    async fn increment_within(
        &self,
        key: &str,
        delta: u64,
        ceiling: u64,
    ) -> Result<Option<u64>, StoreUnavailable>;

    /// Subtracts `delta`, flooring at zero. Returns the new value and whether
    /// the floor was hit.
    async fn decrement_floored(&self, key: &str, delta: u64)
        -> Result<(u64, bool), StoreUnavailable>;

    async fn get(&self, key: &str) -> Result<u64, StoreUnavailable>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FairnessConfig {
    pub s_max: u64,
}

impl Default for FairnessConfig {
    fn default() -> Self {
        Self {
            s_max: DEFAULT_S_MAX,
        }
    }
}

impl FairnessConfig {
    pub fn new(s_max: u64) -> Result<Self, String> {
        if s_max == 0 {
            return Err("s_max must be at least 1".into());
        }
        Ok(Self { s_max })
    }

    /// Reads `FAIRNESS_SMAX`.
    pub fn from_env() -> Result<Self, crate::config::ConfigError> {
        let s_max = crate::config::env_parse("FAIRNESS_SMAX", DEFAULT_S_MAX)?;
        Self::new(s_max).map_err(|reason| crate::config::ConfigError::Invalid {
            key: "FAIRNESS_SMAX",
            value: s_max.to_string(),
            reason,
        })
    }

    /// QPU time a user could have outstanding at the cap.
    pub fn qpu_equivalent_ms(&self, t_shot_ms: f64) -> f64 {
        self.s_max as f64 * t_shot_ms
    }

    /// Logs a warning when the cap is far from about five minutes of QPU
    /// time. Advisory only.
    pub fn check_against_shot_time(&self, t_shot_ms: f64) -> bool {
        let ms = self.qpu_equivalent_ms(t_shot_ms);
        let consistent = (ms - S_MAX_TARGET_QPU_MS).abs() <= S_MAX_TARGET_QPU_MS * 0.1;
        if !consistent {
            tracing::warn!(
                s_max = self.s_max,
                t_shot_ms,
                qpu_ms = ms,
                "fairness cap is not close to five minutes of QPU time"
            );
        }
        consistent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquire {
    Acquired,
    OverLimit,
    StoreUnavailable,
}

#[derive(Clone)]
pub struct FairnessLedger {
    store: Arc<dyn CounterStore>,
    config: FairnessConfig,
}

impl std::fmt::Debug for FairnessLedger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FairnessLedger")
            .field("s_max", &self.config.s_max)
            .finish_non_exhaustive()
    }
}

pub fn counter_key(user_id: &str) -> String {
    format!("fairness:{user_id}")
}

impl FairnessLedger {
    pub fn new(store: Arc<dyn CounterStore>, config: FairnessConfig) -> Self {
        Self { store, config }
    }

    pub fn in_memory(config: FairnessConfig) -> Self {
        Self::new(Arc::new(MemoryCounterStore::new()), config)
    }

    pub fn s_max(&self) -> u64 {
        self.config.s_max
    }

    pub async fn try_acquire(&self, user_id: &str, shot_units: u64) -> Acquire {
        debug_assert!(shot_units >= 1);
        match self
            .store
            .increment_within(&counter_key(user_id), shot_units, self.config.s_max)
            .await
        {
            Ok(Some(_)) => Acquire::Acquired,
            Ok(None) => Acquire::OverLimit,
            Err(StoreUnavailable) => Acquire::StoreUnavailable,
        }
    }

    /// Undoes an acquisition whose upstream submission failed.
    pub async fn rollback(&self, user_id: &str, shot_units: u64) -> Result<u64, StoreUnavailable> {
        self.decrement(user_id, shot_units, "rollback").await
    }

    /// Returns quota held by a job that reached a terminal state.
    pub async fn release(&self, user_id: &str, shot_units: u64) -> Result<u64, StoreUnavailable> {
        self.decrement(user_id, shot_units, "release").await
    }

    async fn decrement(
        &self,
        user_id: &str,
        shot_units: u64,
        op: &'static str,
    ) -> Result<u64, StoreUnavailable> {
        let (value, floored) = self
            .store
            .decrement_floored(&counter_key(user_id), shot_units)
            .await?;
        if floored {
            tracing::warn!(user_id, shot_units, op, "fairness counter floored at zero");
        }
        Ok(value)
    }

    pub async fn read(&self, user_id: &str) -> Result<u64, StoreUnavailable> {
        self.store.get(&counter_key(user_id)).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> FairnessLedger {
        FairnessLedger::in_memory(FairnessConfig::default())
    }

    async fn preload(l: &FairnessLedger, user: &str, units: u64) {
        assert_eq!(l.try_acquire(user, units).await, Acquire::Acquired);
    }

    #[tokio::test]
    async fn acquire_from_zero() {
        let l = ledger();
        assert_eq!(l.try_acquire("u", 100).await, Acquire::Acquired);
        assert_eq!(l.read("u").await.unwrap(), 100);
    }

    #[tokio::test]
    async fn boundary_is_inclusive() {
        let l = ledger();
        preload(&l, "u", 2_400_000).await;
        assert_eq!(l.try_acquire("u", 100_000).await, Acquire::Acquired);
        assert_eq!(l.read("u").await.unwrap(), 2_500_000);
    }

    #[tokio::test]
    async fn one_over_boundary_rejected() {
        let l = ledger();
        preload(&l, "u", 2_400_001).await;
        assert_eq!(l.try_acquire("u", 100_000).await, Acquire::OverLimit);
        assert_eq!(l.read("u").await.unwrap(), 2_400_001);
    }

    #[tokio::test]
    async fn rollback_and_floor() {
        let l = ledger();
        preload(&l, "u", 100).await;
        assert_eq!(l.rollback("u", 100).await.unwrap(), 0);
        preload(&l, "v", 50).await;
        assert_eq!(l.rollback("v", 100).await.unwrap(), 0);
    }

    #[tokio::test]
    async fn acquire_then_rollback_restores() {
        let l = ledger();
        preload(&l, "u", 1234).await;
        assert_eq!(l.try_acquire("u", 100_000).await, Acquire::Acquired);
        l.rollback("u", 100_000).await.unwrap();
        assert_eq!(l.read("u").await.unwrap(), 1234);
    }

    #[tokio::test]
    async fn release_full_cap() {
        let l = ledger();
        preload(&l, "u", 2_500_000).await;
        assert_eq!(l.release("u", 2_500_000).await.unwrap(), 0);
    }

    #[tokio::test]
    async fn read_examples() {
        let l = ledger();
        assert_eq!(l.read("nobody").await.unwrap(), 0);
        preload(&l, "u", 7).await;
        assert_eq!(l.read("u").await.unwrap(), 7);
        l.release("u", 7).await.unwrap();
        assert_eq!(l.read("u").await.unwrap(), 0);
    }

    #[tokio::test]
    async fn users_are_independent() {
        let l = FairnessLedger::in_memory(FairnessConfig::new(10).unwrap());
        preload(&l, "a", 10).await;
        assert_eq!(l.try_acquire("b", 10).await, Acquire::Acquired);
        assert_eq!(l.try_acquire("a", 1).await, Acquire::OverLimit);
    }

    #[tokio::test]
    async fn unavailable_store_reported() {
        let store = Arc::new(MemoryCounterStore::new());
        store.set_available(false);
        let l = FairnessLedger::new(store, FairnessConfig::default());
        assert_eq!(l.try_acquire("u", 1).await, Acquire::StoreUnavailable);
        assert_eq!(l.read("u").await, Err(StoreUnavailable));
    }

    #[tokio::test]
    async fn concurrent_releases_sum_exactly() {
        let l = ledger();
        preload(&l, "u", 1_000_000).await;
        let parts: Vec<u64> = (1..=40).map(|i| i * 97).collect();
        let total: u64 = parts.iter().sum();
        let handles: Vec<_> = parts
            .iter()
            .map(|&p| {
                let l = l.clone();
                tokio::spawn(async move { l.release("u", p).await.unwrap() })
            })
            .collect();
        for h in handles {
            h.await.unwrap();
        }
        assert_eq!(l.read("u").await.unwrap(), 1_000_000 - total);
    }

    #[test]
    fn zero_cap_rejected() {
        assert!(FairnessConfig::new(0).is_err());
    }

    #[test]
    fn default_cap_is_five_minutes_at_default_shot_time() {
        let cfg = FairnessConfig::default();
        assert_eq!(cfg.s_max, 2_500_000);
        assert!(cfg.check_against_shot_time(crate::mock::DEFAULT_T_SHOT_MS));
        assert!(!FairnessConfig::new(10).unwrap().check_against_shot_time(0.12));
    }
}
