//! Time sources. Services take an `Arc<dyn Clock>` so tests can step time.

use std::sync::Arc;

use chrono::{DateTime, Duration, DurationRound, Utc};
use parking_lot::Mutex;

pub type Timestamp = DateTime<Utc>;

pub trait Clock: Send + Sync + std::fmt::Debug {
    fn now(&self) -> Timestamp;
}

/// Wall clock truncated to millisecond precision.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        truncate_ms(Utc::now())
    }
}

/// Manually advanced clock for deterministic tests and demos.
#[derive(Debug, Clone)]
pub struct ManualClock {
    inner: Arc<Mutex<Timestamp>>,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            inner: Arc::new(Mutex::new(truncate_ms(start))),
        }
    }

    /// 2026-01-01T00:00:00Z, a convenient fixture epoch.
    pub fn at_epoch() -> Self {
        Self::new(parse_ts("2026-01-01T00:00:00Z").expect("valid fixture epoch"))
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.inner.lock();
        *now += by;
    }

    pub fn advance_ms(&self, ms: i64) {
        self.advance(Duration::milliseconds(ms));
    }

    pub fn set(&self, to: Timestamp) {
        *self.inner.lock() = truncate_ms(to);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        *self.inner.lock()
    }
}

pub fn system() -> Arc<dyn Clock> {
    Arc::new(SystemClock)
}

pub fn truncate_ms(ts: Timestamp) -> Timestamp {
    ts.duration_trunc(Duration::milliseconds(1)).unwrap_or(ts)
}

pub fn parse_ts(s: &str) -> Result<Timestamp, chrono::ParseError> {
    DateTime::parse_from_rfc3339(s).map(|t| truncate_ms(t.with_timezone(&Utc)))
}

/// Milliseconds in `[start, end)`; negative spans clamp to zero.
pub fn span_ms(start: Timestamp, end: Timestamp) -> u64 {
    (end - start).num_milliseconds().max(0) as u64
}

/// Serde adapter that writes ISO-8601 with exactly three fractional digits.
pub mod iso_ms {
    use chrono::SecondsFormat;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::Timestamp;

    pub fn serialize<S: Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&ts.to_rfc3339_opts(SecondsFormat::Millis, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Timestamp, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_ts(&raw).map_err(serde::de::Error::custom)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(ts: &Option<Timestamp>, s: S) -> Result<S::Ok, S::Error> {
            match ts {
                Some(ts) => super::serialize(ts, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Timestamp>, D::Error> {
            let raw = Option::<String>::deserialize(d)?;
            raw.map(|r| super::super::parse_ts(&r).map_err(serde::de::Error::custom))
                .transpose()
        }
    }
}
