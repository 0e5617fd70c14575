use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::{iso_ms, span_ms, Timestamp};
use crate::plugin::JobStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Admin,
    OrgManager,
    Pi,
    Regular,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Admin => "admin",
            Role::OrgManager => "org_manager",
            Role::Pi => "pi",
            Role::Regular => "regular",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "admin" => Ok(Role::Admin),
            "org_manager" => Ok(Role::OrgManager),
            "pi" => Ok(Role::Pi),
            "regular" => Ok(Role::Regular),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organisation {
    pub org_id: String,
    pub name: String,
    pub yearly_budget_ms: u64,
    pub consumed_ms: u64,
    #[serde(default)]
    pub disabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    pub org_id: String,
    pub name: String,
    pub budget_ms: u64,
    pub consumed_ms: u64,
    pub member_ids: BTreeSet<String>,
    /// PIs; always a subset of `member_ids`.
    pub admin_ids: BTreeSet<String>,
    #[serde(default)]
    pub disabled: bool,
}

impl Project {
    pub fn remaining_ms(&self) -> u64 {
        self.budget_ms.saturating_sub(self.consumed_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct User {
    pub user_id: String,
    pub username: String,
    pub org_ids: BTreeSet<String>,
    pub role: Role,
    #[serde(default)]
    pub default_project_id: Option<String>,
    #[serde(default)]
    pub disabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreAllocatedSlot {
    pub slot_id: String,
    pub org_id: String,
    #[serde(with = "iso_ms")]
    pub start: Timestamp,
    #[serde(with = "iso_ms")]
    pub end: Timestamp,
}

impl PreAllocatedSlot {
    pub fn contains(&self, start: Timestamp, end: Timestamp) -> bool {
        self.start <= start && end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub reservation_id: String,
    pub project_id: String,
    #[serde(with = "iso_ms")]
    pub start: Timestamp,
    #[serde(with = "iso_ms")]
    pub end: Timestamp,
    /// `end - start` in milliseconds, debited at creation.
    pub charged_ms: u64,
}

impl Reservation {
    pub fn is_active(&self, now: Timestamp) -> bool {
        self.start <= now && now < self.end
    }

    pub fn duration_ms(&self) -> u64 {
        span_ms(self.start, self.end)
    }
}

/// Half-open interval overlap.
pub fn overlaps(a_start: Timestamp, a_end: Timestamp, b_start: Timestamp, b_end: Timestamp) -> bool {
    a_start < b_end && b_start < a_end
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobLedgerRecord {
    pub job_id: String,
    pub user_id: String,
    pub project_id: String,
    #[serde(with = "iso_ms")]
    pub submitted_at: Timestamp,
    pub num_circuits: u32,
    pub shots: u32,
    pub status: JobStatus,
    #[serde(default)]
    pub qpu_time_ms: Option<u64>,
    /// Whether the job runs against the project budget (false under the
    /// project's own reservation).
    pub charge_budget: bool,
    /// Set once the completion charge has been applied.
    pub charged: bool,
    /// Amount actually debited; differs from `qpu_time_ms` only when the
    /// remaining budget could not cover the full run.
    #[serde(default)]
    pub charged_ms: u64,
    #[serde(default)]
    pub overage_ms: u64,
    #[serde(default)]
    pub result_url: Option<String>,
    #[serde(default, with = "iso_ms::option")]
    pub completed_at: Option<Timestamp>,
    #[serde(default)]
    pub submitted_reported: bool,
    #[serde(default)]
    pub completed_reported: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    JobCharge,
    ReservationCharge,
    ReservationRefund,
    BudgetSet,
}

/// One committed budget mutation with the post-commit state of the project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEntry {
    pub seq: u64,
    #[serde(with = "iso_ms")]
    pub at: Timestamp,
    pub kind: TxKind,
    pub project_id: String,
    pub org_id: String,
    /// Job or reservation id; empty for budget changes.
    pub reference: String,
    pub delta_ms: i64,
    pub consumed_after_ms: u64,
    pub budget_after_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewOrganisation {
    #[serde(default)]
    pub org_id: Option<String>,
    pub name: String,
    pub yearly_budget_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OrganisationPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub yearly_budget_ms: Option<u64>,
    #[serde(default)]
    pub disabled: Option<bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewProject {
    #[serde(default)]
    pub project_id: Option<String>,
    pub org_id: String,
    pub name: String,
    pub budget_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProjectPatch {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub budget_ms: Option<u64>,
    #[serde(default)]
    pub disabled: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewUser {
    #[serde(default)]
    pub user_id: Option<String>,
    pub username: String,
    #[serde(default)]
    pub org_ids: BTreeSet<String>,
    pub role: Role,
    /// Forwarded to the credential directory, never stored here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UserPatch {
    #[serde(default)]
    pub role: Option<Role>,
    #[serde(default)]
    pub org_ids: Option<BTreeSet<String>>,
    /// `Some(None)` clears the default project.
    #[serde(default, with = "double_option", skip_serializing_if = "Option::is_none")]
    pub default_project_id: Option<Option<String>>,
    #[serde(default)]
    pub disabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub password: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Membership {
    pub user_id: String,
    #[serde(default)]
    pub pi: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewSlot {
    #[serde(default)]
    pub slot_id: Option<String>,
    pub org_id: String,
    #[serde(with = "iso_ms")]
    pub start: Timestamp,
    #[serde(with = "iso_ms")]
    pub end: Timestamp,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SlotPatch {
    #[serde(default, with = "iso_ms::option")]
    pub start: Option<Timestamp>,
    #[serde(default, with = "iso_ms::option")]
    pub end: Option<Timestamp>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewReservation {
    pub project_id: String,
    #[serde(with = "iso_ms")]
    pub start: Timestamp,
    #[serde(with = "iso_ms")]
    pub end: Timestamp,
}

/// Distinguishes an absent field from an explicit `null`.
mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S, T>(value: &Option<Option<T>>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        T: Serialize,
    {
        match value {
            Some(inner) => inner.serialize(s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D, T>(d: D) -> Result<Option<Option<T>>, D::Error>
    where
        D: Deserializer<'de>,
        T: Deserialize<'de>,
    {
        Option::<T>::deserialize(d).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::parse_ts;

    #[test]
    fn half_open_overlap() {
        let t = |s: &str| parse_ts(s).unwrap();
        let (a, b, c) = (
            t("2026-01-01T10:00:00Z"),
            t("2026-01-01T11:00:00Z"),
            t("2026-01-01T12:00:00Z"),
        );
        assert!(!overlaps(a, b, b, c));
        assert!(overlaps(a, c, b, c));
    }

    #[test]
    fn patch_distinguishes_null_from_absent() {
        let cleared: UserPatch = serde_json::from_str(r#"{"default_project_id": null}"#).unwrap();
        assert_eq!(cleared.default_project_id, Some(None));
        let absent: UserPatch = serde_json::from_str("{}").unwrap();
        assert_eq!(absent.default_project_id, None);
    }

    #[test]
    fn role_names() {
        for r in [Role::Admin, Role::OrgManager, Role::Pi, Role::Regular] {
            assert_eq!(r.as_str().parse::<Role>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.as_str()));
        }
    }
}
