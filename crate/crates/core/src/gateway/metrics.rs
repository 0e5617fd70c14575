use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Requests,
    Unauthenticated,
    Forbidden,
    NotFound,
    Passthrough,
    SubmissionsAccepted,
    MalformedSubmissions,
    DeniedNoProject,
    DeniedExclusiveReservation,
    DeniedBudgetExhausted,
    RateLimited,
    AuthorizationUnavailable,
    UpstreamFailures,
    Rollbacks,
    CounterFailOpen,
}

impl Metric {
    pub const ALL: [Metric; 15] = [
        Metric::Requests,
        Metric::Unauthenticated,
        Metric::Forbidden,
        Metric::NotFound,
        Metric::Passthrough,
        Metric::SubmissionsAccepted,
        Metric::MalformedSubmissions,
        Metric::DeniedNoProject,
        Metric::DeniedExclusiveReservation,
        Metric::DeniedBudgetExhausted,
        Metric::RateLimited,
        Metric::AuthorizationUnavailable,
        Metric::UpstreamFailures,
        Metric::Rollbacks,
        Metric::CounterFailOpen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Requests => "requests_total",
            Metric::Unauthenticated => "unauthenticated_total",
            Metric::Forbidden => "forbidden_total",
            Metric::NotFound => "not_found_total",
            Metric::Passthrough => "passthrough_total",
            Metric::SubmissionsAccepted => "submissions_accepted_total",
            Metric::MalformedSubmissions => "submissions_malformed_total",
            Metric::DeniedNoProject => "denied_no_project_total",
            Metric::DeniedExclusiveReservation => "denied_exclusive_reservation_total",
            Metric::DeniedBudgetExhausted => "denied_budget_exhausted_total",
            Metric::RateLimited => "denied_fairness_limit_total",
            Metric::AuthorizationUnavailable => "authorization_unavailable_total",
            Metric::UpstreamFailures => "upstream_failures_total",
            Metric::Rollbacks => "ledger_rollbacks_total",
            Metric::CounterFailOpen => "counter_store_fail_open_total",
        }
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    counters: [AtomicU64; Metric::ALL.len()],
}

impl Metrics {
    pub fn incr(&self, m: Metric) {
        self.counters[m as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self, m: Metric) -> u64 {
        self.counters[m as usize].load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> BTreeMap<&'static str, u64> {
        Metric::ALL.iter().map(|&m| (m.name(), self.get(m))).collect()
    }
}
