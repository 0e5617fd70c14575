use std::sync::atomic::{AtomicBool, Ordering};

use async_trait::async_trait;
use dashmap::DashMap;

use super::{CounterStore, StoreUnavailable};

/// In-process counter map. Each key's check-and-update runs under that key's
/// shard lock, so no interleaving can overshoot the ceiling.
#[derive(Debug)]
pub struct MemoryCounterStore {
    counters: DashMap<String, u64>,
    available: AtomicBool,
}

impl Default for MemoryCounterStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryCounterStore {
    pub fn new() -> Self {
        Self {
            counters: DashMap::new(),
            available: AtomicBool::new(true),
        }
    }

    /// Simulates an outage: every call fails with [`StoreUnavailable`].
    pub fn set_available(&self, available: bool) {
        self.available.store(available, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), StoreUnavailable> {
        if self.available.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(StoreUnavailable)
        }
    }
}

#[async_trait]
impl CounterStore for MemoryCounterStore {
    async fn increment_within(
        &self,
        key: &str,
        delta: u64,
        ceiling: u64,
    ) -> Result<Option<u64>, StoreUnavailable> {
        self.check()?;
        let mut entry = self.counters.entry(key.to_string()).or_insert(0);
        match entry.checked_add(delta) {
            Some(next) if next <= ceiling => {
                *entry = next;
                Ok(Some(next))
            }
            _ => Ok(None),
        }
    }

    async fn decrement_floored(
        &self,
        key: &str,
        delta: u64,
    ) -> Result<(u64, bool), StoreUnavailable> {
        self.check()?;
        let mut entry = self.counters.entry(key.to_string()).or_insert(0);
        let floored = *entry < delta;
        *entry = entry.saturating_sub(delta);
        Ok((*entry, floored))
    }

    async fn get(&self, key: &str) -> Result<u64, StoreUnavailable> {
        self.check()?;
        Ok(self.counters.get(key).map(|v| *v).unwrap_or(0))
    }
}
