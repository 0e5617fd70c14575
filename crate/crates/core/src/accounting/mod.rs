//! Site backend: organisations, projects, users, pre-allocated slots and
//! exclusive reservations, job records and billing.
//!
//! Budgets are QPU milliseconds. Every budget mutation runs inside a single
//! lock-protected transaction that re-checks `consumed_ms <= budget_ms` before
//! committing, and appends to a transaction log that tests replay to audit
//! the invariant.

mod http;
mod model;
mod report;
mod service;
#[cfg(test)]
mod tests;

pub use http::router;
pub use model::*;
pub use report::{BillingReport, ReportScope, UserUsage};
pub use service::{Accounting, Actor};

use serde::{Deserialize, Serialize};

use crate::clock::{iso_ms, Timestamp};

/// Body of `POST /jobAuthoriser`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoriseRequest {
    pub user_id: String,
    #[serde(default)]
    pub project_hint: Option<String>,
    pub estimated_cost_ms: u64,
    /// Evaluation instant; the backend clock is used when absent.
    #[serde(default, with = "iso_ms::option", skip_serializing_if = "Option::is_none")]
    pub at: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AccountingError {
    #[error("not authorised: {0}")]
    NotAuthorised(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("window is not inside a pre-allocated slot of the project's organisation")]
    OutsideSlot,
    #[error("window overlaps an existing {0}")]
    Overlap(String),
    #[error("insufficient budget: need {needed_ms} ms, {remaining_ms} ms remaining")]
    InsufficientBudget { needed_ms: u64, remaining_ms: u64 },
    #[error("reservation has already started")]
    AlreadyStarted,
    #[error("unknown project {0}")]
    UnknownProject(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("persistence failure: {0}")]
    Persistence(String),
}

impl AccountingError {
    /// Stable machine-readable code used in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            AccountingError::NotAuthorised(_) => "NotAuthorised",
            AccountingError::NotFound(_) => "NotFound",
            AccountingError::IntegrityViolation(_) => "IntegrityViolation",
            AccountingError::OutsideSlot => "OutsideSlot",
            AccountingError::Overlap(_) => "Overlap",
            AccountingError::InsufficientBudget { .. } => "InsufficientBudget",
            AccountingError::AlreadyStarted => "AlreadyStarted",
            AccountingError::UnknownProject(_) => "UnknownProject",
            AccountingError::InvalidInput(_) => "InvalidInput",
            AccountingError::Persistence(_) => "Persistence",
        }
    }
}

/// Outcome of `report_job`: replays are acknowledged, not errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportAck {
    Recorded,
    DuplicateIgnored,
}
