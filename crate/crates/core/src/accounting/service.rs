use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::model::*;
use super::report::{self, BillingReport, ReportScope};
use super::{AccountingError, AuthoriseRequest, ReportAck};
use crate::authn::CredentialSink;
use crate::clock::{span_ms, Clock, Timestamp};
use crate::plugin::{AuthorizationReason, JobAuthorizationResult, JobReport, JobStatus, ReportPhase};

type Result<T> = std::result::Result<T, AccountingError>;

/// Who is calling. `Service` is the gateway/reporter (and bootstrap tooling)
/// and has full rights; `User` carries a user id from a validated token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Actor {
    Service,
    User(String),
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct State {
    orgs: BTreeMap<String, Organisation>,
    projects: BTreeMap<String, Project>,
    users: BTreeMap<String, User>,
    slots: BTreeMap<String, PreAllocatedSlot>,
    reservations: BTreeMap<String, Reservation>,
    jobs: BTreeMap<String, JobLedgerRecord>,
    tx_log: Vec<TxEntry>,
    next_id: u64,
}

#[derive(Clone, Copy)]
enum CallerRef<'a> {
    Service,
    User(&'a User),
}

impl CallerRef<'_> {
    fn is_admin(&self) -> bool {
        match self {
            CallerRef::Service => true,
            CallerRef::User(u) => u.role == Role::Admin,
        }
    }

    fn manages_org(&self, org_id: &str) -> bool {
        self.is_admin()
            || matches!(self, CallerRef::User(u) if u.role == Role::OrgManager && u.org_ids.contains(org_id))
    }

    fn user_id(&self) -> Option<&str> {
        match self {
            CallerRef::Service => None,
            CallerRef::User(u) => Some(&u.user_id),
        }
    }

    fn is_pi_of(&self, project: &Project) -> bool {
        self.user_id().is_some_and(|id| project.admin_ids.contains(id))
    }

    fn is_member_of(&self, project: &Project) -> bool {
        self.user_id().is_some_and(|id| project.member_ids.contains(id))
    }

    fn can_manage_project(&self, project: &Project) -> bool {
        self.manages_org(&project.org_id) || self.is_pi_of(project)
    }

    fn can_view_project(&self, project: &Project) -> bool {
        self.manages_org(&project.org_id) || self.is_member_of(project)
    }
}

fn denied(what: impl Into<String>) -> AccountingError {
    AccountingError::NotAuthorised(what.into())
}

impl State {
    fn caller(&self, actor: &Actor) -> Result<CallerRef<'_>> {
        match actor {
            Actor::Service => Ok(CallerRef::Service),
            Actor::User(id) => match self.users.get(id) {
                Some(u) if !u.disabled => Ok(CallerRef::User(u)),
                Some(_) => Err(denied("user is disabled")),
                None => Err(denied(format!("unknown user {id}"))),
            },
        }
    }

    fn fresh_id(&mut self, prefix: &str, taken: impl Fn(&State, &str) -> bool) -> String {
        loop {
            self.next_id += 1;
            let id = format!("{prefix}-{}", self.next_id);
            if !taken(self, &id) {
                return id;
            }
        }
    }

    fn project(&self, id: &str) -> Result<&Project> {
        self.projects
            .get(id)
            .ok_or_else(|| AccountingError::NotFound(format!("project {id}")))
    }

    fn org(&self, id: &str) -> Result<&Organisation> {
        self.orgs
            .get(id)
            .ok_or_else(|| AccountingError::NotFound(format!("organisation {id}")))
    }

    fn user(&self, id: &str) -> Result<&User> {
        self.users
            .get(id)
            .ok_or_else(|| AccountingError::NotFound(format!("user {id}")))
    }

    fn allocated_budget(&self, org_id: &str, excluding: Option<&str>) -> u64 {
        self.projects
            .values()
            .filter(|p| p.org_id == org_id && Some(p.project_id.as_str()) != excluding)
            .map(|p| p.budget_ms)
            .sum()
    }

    fn has_jobs_for_project(&self, project_id: &str) -> bool {
        self.jobs.values().any(|j| j.project_id == project_id)
    }

    fn has_jobs_for_user(&self, user_id: &str) -> bool {
        self.jobs.values().any(|j| j.user_id == user_id)
    }

    fn active_reservation(&self, now: Timestamp) -> Option<&Reservation> {
        self.reservations.values().find(|r| r.is_active(now))
    }

    /// Applies a signed delta to a project's (and its org's) consumption and
    /// logs it. The caller has already checked the budget.
    fn apply_consumption(
        &mut self,
        now: Timestamp,
        kind: TxKind,
        project_id: &str,
        reference: &str,
        delta_ms: i64,
    ) {
        let project = self.projects.get_mut(project_id).expect("checked project");
        project.consumed_ms = project.consumed_ms.saturating_add_signed(delta_ms);
        debug_assert!(project.consumed_ms <= project.budget_ms);
        let (org_id, consumed_after_ms, budget_after_ms) =
            (project.org_id.clone(), project.consumed_ms, project.budget_ms);
        if let Some(org) = self.orgs.get_mut(&org_id) {
            org.consumed_ms = org.consumed_ms.saturating_add_signed(delta_ms);
        }
        self.log(TxEntry {
            seq: 0,
            at: now,
            kind,
            project_id: project_id.to_string(),
            org_id,
            reference: reference.to_string(),
            delta_ms,
            consumed_after_ms,
            budget_after_ms,
        });
    }

    fn log(&mut self, mut entry: TxEntry) {
        entry.seq = self.tx_log.len() as u64 + 1;
        self.tx_log.push(entry);
    }

    fn resolve_project(&self, user: &User, hint: Option<&str>) -> Option<&Project> {
        let usable = |id: &str| {
            self.projects
                .get(id)
                .filter(|p| !p.disabled && p.member_ids.contains(&user.user_id))
        };
        hint.and_then(usable)
            .or_else(|| user.default_project_id.as_deref().and_then(usable))
    }
}

/// The accounting service. All operations serialize on one lock, so each
/// call is a serializable transaction.
pub struct Accounting {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    persist_path: Option<PathBuf>,
    directory: Option<Arc<dyn CredentialSink>>,
}

impl std::fmt::Debug for Accounting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Accounting")
            .field("persist_path", &self.persist_path)
            .finish_non_exhaustive()
    }
}

impl Accounting {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self {
            state: Mutex::new(State::default()),
            clock,
            persist_path: None,
            directory: None,
        }
    }

    /// Opens (or creates) a single-file store. Every committed mutation
    /// rewrites the file atomically.
    pub fn open(path: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let state = match std::fs::read(&path) {
            Ok(raw) => serde_json::from_slice(&raw)
                .map_err(|e| AccountingError::Persistence(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => State::default(),
            Err(e) => return Err(AccountingError::Persistence(e.to_string())),
        };
        Ok(Self {
            state: Mutex::new(state),
            clock,
            persist_path: Some(path),
            directory: None,
        })
    }

    /// Users created or updated here are mirrored into `directory` so the
    /// token issuer can authenticate them.
    pub fn with_directory(mut self, directory: Arc<dyn CredentialSink>) -> Self {
        self.directory = Some(directory);
        self
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn commit(&self, state: &State) -> Result<()> {
        let Some(path) = &self.persist_path else {
            return Ok(());
        };
        let raw = serde_json::to_vec(state).map_err(|e| AccountingError::Persistence(e.to_string()))?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let write = || -> std::io::Result<()> {
            use std::io::Write;
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(&raw)?;
            tmp.as_file().sync_all()?;
            tmp.persist(path).map_err(|e| e.error)?;
            Ok(())
        };
        write().map_err(|e| AccountingError::Persistence(e.to_string()))
    }

    fn sync_user(&self, user: &User, password: Option<&str>) {
        if let Some(dir) = &self.directory {
            dir.upsert_user(
                &user.user_id,
                &user.username,
                &[user.role.as_str().to_string()],
                user.disabled,
                password,
            );
        }
    }

    // ---- job authorisation and reporting -------------------------------

    /// Decides whether a job may run, in order: project membership,
    /// exclusive reservation, remaining budget. Read-only.
    pub fn authorise_job(&self, req: &AuthoriseRequest) -> JobAuthorizationResult {
        let now = req.at.unwrap_or_else(|| self.clock.now());
        let st = self.state.lock();
        let Some(user) = st.users.get(&req.user_id).filter(|u| !u.disabled) else {
            return JobAuthorizationResult::deny(AuthorizationReason::NoProject);
        };
        let Some(project) = st.resolve_project(user, req.project_hint.as_deref()) else {
            return JobAuthorizationResult::deny(AuthorizationReason::NoProject);
        };
        if let Some(reservation) = st.active_reservation(now) {
            return if reservation.project_id == project.project_id {
                JobAuthorizationResult::approve(&project.project_id, false)
            } else {
                JobAuthorizationResult::deny(AuthorizationReason::ExclusiveReservation)
            };
        }
        if project.consumed_ms.saturating_add(req.estimated_cost_ms) > project.budget_ms {
            return JobAuthorizationResult::deny(AuthorizationReason::BudgetExhausted);
        }
        JobAuthorizationResult::approve(&project.project_id, true)
    }

    /// Records a lifecycle event. Idempotent per `(job_id, phase)`.
    pub fn report_job(&self, report: &JobReport) -> Result<ReportAck> {
        if report.phase == ReportPhase::Completed {
            if !report.status.is_terminal() {
                return Err(AccountingError::InvalidInput(
                    "completed report needs a terminal status".into(),
                ));
            }
            if report.qpu_time_ms.is_none() {
                return Err(AccountingError::InvalidInput(
                    "completed report needs qpu_time_ms".into(),
                ));
            }
        }
        let now = self.clock.now();
        let mut st = self.state.lock();
        if !st.projects.contains_key(&report.project_id) {
            return Err(AccountingError::UnknownProject(report.project_id.clone()));
        }
        if let Some(existing) = st.jobs.get(&report.job_id) {
            if existing.project_id != report.project_id || existing.user_id != report.user_id {
                return Err(AccountingError::IntegrityViolation(format!(
                    "job {} reported with a different user or project",
                    report.job_id
                )));
            }
            let already = match report.phase {
                ReportPhase::Submitted => existing.submitted_reported,
                ReportPhase::Completed => existing.completed_reported,
            };
            if already {
                return Ok(ReportAck::DuplicateIgnored);
            }
        }
        let record = st
            .jobs
            .entry(report.job_id.clone())
            .or_insert_with(|| JobLedgerRecord {
                job_id: report.job_id.clone(),
                user_id: report.user_id.clone(),
                project_id: report.project_id.clone(),
                submitted_at: report.submitted_at,
                num_circuits: report.num_circuits,
                shots: report.shots,
                status: JobStatus::Pending,
                qpu_time_ms: None,
                charge_budget: report.charge_budget,
                charged: false,
                charged_ms: 0,
                overage_ms: 0,
                result_url: None,
                completed_at: None,
                submitted_reported: false,
                completed_reported: false,
            });
        let mut charge = None;
        match report.phase {
            ReportPhase::Submitted => record.submitted_reported = true,
            ReportPhase::Completed => {
                let qpu = report.qpu_time_ms.expect("checked above");
                record.completed_reported = true;
                record.status = report.status;
                record.qpu_time_ms = Some(qpu);
                record.completed_at = Some(now);
                record.charge_budget = report.charge_budget;
                if report.result_url.is_some() {
                    record.result_url = report.result_url.clone();
                }
                if report.charge_budget && report.status == JobStatus::Ready {
                    charge = Some(qpu);
                }
            }
        }
        if let Some(qpu) = charge {
            let remaining = st.project(&report.project_id)?.remaining_ms();
            let debit = qpu.min(remaining);
            if debit < qpu {
                tracing::warn!(
                    job_id = %report.job_id,
                    qpu,
                    remaining,
                    "completion exceeds remaining budget; charge capped"
                );
            }
            let record = st.jobs.get_mut(&report.job_id).expect("inserted");
            record.charged = true;
            record.charged_ms = debit;
            record.overage_ms = qpu - debit;
            st.apply_consumption(now, TxKind::JobCharge, &report.project_id, &report.job_id, debit as i64);
        }
        self.commit(&st)?;
        Ok(ReportAck::Recorded)
    }

    // ---- organisations -------------------------------------------------

    pub fn create_org(&self, actor: &Actor, new: NewOrganisation) -> Result<Organisation> {
        let mut st = self.state.lock();
        if !st.caller(actor)?.is_admin() {
            return Err(denied("only admins create organisations"));
        }
        if let Some(id) = &new.org_id {
            if st.orgs.contains_key(id) {
                return Err(AccountingError::IntegrityViolation(format!("organisation {id} exists")));
            }
        }
        let org_id = match new.org_id {
            Some(id) => id,
            None => st.fresh_id("org", |s, id| s.orgs.contains_key(id)),
        };
        let org = Organisation {
            org_id: org_id.clone(),
            name: new.name,
            yearly_budget_ms: new.yearly_budget_ms,
            consumed_ms: 0,
            disabled: false,
        };
        st.orgs.insert(org_id, org.clone());
        self.commit(&st)?;
        Ok(org)
    }

    pub fn get_org(&self, actor: &Actor, org_id: &str) -> Result<Organisation> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        let org = st.org(org_id)?;
        let visible = caller.is_admin()
            || matches!(caller, CallerRef::User(u) if u.org_ids.contains(org_id));
        if !visible {
            return Err(denied(format!("organisation {org_id}")));
        }
        Ok(org.clone())
    }

    pub fn list_orgs(&self, actor: &Actor) -> Result<Vec<Organisation>> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        Ok(st
            .orgs
            .values()
            .filter(|o| {
                caller.is_admin()
                    || matches!(caller, CallerRef::User(u) if u.org_ids.contains(&o.org_id))
            })
            .cloned()
            .collect())
    }

    pub fn update_org(&self, actor: &Actor, org_id: &str, patch: OrganisationPatch) -> Result<Organisation> {
        let mut st = self.state.lock();
        if !st.caller(actor)?.is_admin() {
            return Err(denied("only admins update organisations"));
        }
        st.org(org_id)?;
        if let Some(budget) = patch.yearly_budget_ms {
            let allocated = st.allocated_budget(org_id, None);
            if budget < allocated {
                return Err(AccountingError::IntegrityViolation(format!(
                    "yearly budget {budget} ms is below the {allocated} ms allocated to projects"
                )));
            }
        }
        let org = st.orgs.get_mut(org_id).expect("checked");
        if let Some(name) = patch.name {
            org.name = name;
        }
        if let Some(budget) = patch.yearly_budget_ms {
            org.yearly_budget_ms = budget;
        }
        if let Some(disabled) = patch.disabled {
            org.disabled = disabled;
        }
        let org = org.clone();
        self.commit(&st)?;
        Ok(org)
    }

    pub fn delete_org(&self, actor: &Actor, org_id: &str) -> Result<()> {
        let mut st = self.state.lock();
        if !st.caller(actor)?.is_admin() {
            return Err(denied("only admins delete organisations"));
        }
        st.org(org_id)?;
        let referenced = st.projects.values().any(|p| p.org_id == org_id)
            || st.slots.values().any(|s| s.org_id == org_id)
            || st.users.values().any(|u| u.org_ids.contains(org_id));
        if referenced {
            return Err(AccountingError::IntegrityViolation(format!(
                "organisation {org_id} still has projects, users or slots; disable it instead"
            )));
        }
        st.orgs.remove(org_id);
        self.commit(&st)
    }

    // ---- projects ------------------------------------------------------

    pub fn create_project(&self, actor: &Actor, new: NewProject) -> Result<Project> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let org = st.org(&new.org_id)?;
        if !caller.manages_org(&new.org_id) {
            return Err(denied(format!("cannot create projects in {}", new.org_id)));
        }
        let allocated = st.allocated_budget(&new.org_id, None);
        if allocated.saturating_add(new.budget_ms) > org.yearly_budget_ms {
            return Err(AccountingError::IntegrityViolation(format!(
                "project budget {} ms exceeds the organisation's unallocated {} ms",
                new.budget_ms,
                org.yearly_budget_ms.saturating_sub(allocated)
            )));
        }
        if let Some(id) = &new.project_id {
            if st.projects.contains_key(id) {
                return Err(AccountingError::IntegrityViolation(format!("project {id} exists")));
            }
        }
        let project_id = match new.project_id {
            Some(id) => id,
            None => st.fresh_id("prj", |s, id| s.projects.contains_key(id)),
        };
        let project = Project {
            project_id: project_id.clone(),
            org_id: new.org_id,
            name: new.name,
            budget_ms: new.budget_ms,
            consumed_ms: 0,
            member_ids: BTreeSet::new(),
            admin_ids: BTreeSet::new(),
            disabled: false,
        };
        st.projects.insert(project_id, project.clone());
        self.commit(&st)?;
        Ok(project)
    }

    pub fn get_project(&self, actor: &Actor, project_id: &str) -> Result<Project> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        let project = st.project(project_id)?;
        if !caller.can_view_project(project) {
            return Err(denied(format!("project {project_id}")));
        }
        Ok(project.clone())
    }

    pub fn list_projects(&self, actor: &Actor) -> Result<Vec<Project>> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        Ok(st
            .projects
            .values()
            .filter(|p| caller.can_view_project(p))
            .cloned()
            .collect())
    }

    pub fn update_project(&self, actor: &Actor, project_id: &str, patch: ProjectPatch) -> Result<Project> {
        let now = self.clock.now();
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let project = st.project(project_id)?;
        if !caller.manages_org(&project.org_id) {
            return Err(denied(format!("cannot update project {project_id}")));
        }
        if let Some(budget) = patch.budget_ms {
            if budget < project.consumed_ms {
                return Err(AccountingError::IntegrityViolation(format!(
                    "budget {budget} ms is below the {} ms already consumed",
                    project.consumed_ms
                )));
            }
            let org = st.org(&project.org_id)?;
            let others = st.allocated_budget(&project.org_id, Some(project_id));
            if others.saturating_add(budget) > org.yearly_budget_ms {
                return Err(AccountingError::IntegrityViolation(format!(
                    "budget {budget} ms exceeds the organisation's unallocated {} ms",
                    org.yearly_budget_ms.saturating_sub(others)
                )));
            }
        }
        let p = st.projects.get_mut(project_id).expect("checked");
        if let Some(name) = patch.name {
            p.name = name;
        }
        if let Some(disabled) = patch.disabled {
            p.disabled = disabled;
        }
        if let Some(budget) = patch.budget_ms {
            let old = p.budget_ms;
            p.budget_ms = budget;
            let (org_id, consumed) = (p.org_id.clone(), p.consumed_ms);
            st.log(TxEntry {
                seq: 0,
                at: now,
                kind: TxKind::BudgetSet,
                project_id: project_id.to_string(),
                org_id,
                reference: String::new(),
                delta_ms: budget as i64 - old as i64,
                consumed_after_ms: consumed,
                budget_after_ms: budget,
            });
        }
        let project = st.projects[project_id].clone();
        self.commit(&st)?;
        Ok(project)
    }

    /// Hard delete; refused once the project has job history or
    /// reservations (disable it instead).
    pub fn delete_project(&self, actor: &Actor, project_id: &str) -> Result<()> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let project = st.project(project_id)?;
        if !caller.manages_org(&project.org_id) {
            return Err(denied(format!("cannot delete project {project_id}")));
        }
        if st.has_jobs_for_project(project_id)
            || st.reservations.values().any(|r| r.project_id == project_id)
        {
            return Err(AccountingError::IntegrityViolation(format!(
                "project {project_id} has history; disable it instead"
            )));
        }
        st.projects.remove(project_id);
        for user in st.users.values_mut() {
            if user.default_project_id.as_deref() == Some(project_id) {
                user.default_project_id = None;
            }
        }
        self.commit(&st)
    }

    pub fn add_member(&self, actor: &Actor, project_id: &str, membership: Membership) -> Result<Project> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let project = st.project(project_id)?;
        if !caller.can_manage_project(project) {
            return Err(denied(format!("cannot manage members of {project_id}")));
        }
        st.user(&membership.user_id)?;
        let p = st.projects.get_mut(project_id).expect("checked");
        p.member_ids.insert(membership.user_id.clone());
        if membership.pi {
            p.admin_ids.insert(membership.user_id.clone());
        }
        let project = p.clone();
        let user = st.users.get_mut(&membership.user_id).expect("checked");
        if user.default_project_id.is_none() {
            user.default_project_id = Some(project_id.to_string());
        }
        self.commit(&st)?;
        Ok(project)
    }

    pub fn remove_member(&self, actor: &Actor, project_id: &str, user_id: &str) -> Result<Project> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let project = st.project(project_id)?;
        if !caller.can_manage_project(project) {
            return Err(denied(format!("cannot manage members of {project_id}")));
        }
        if !project.member_ids.contains(user_id) {
            return Err(AccountingError::NotFound(format!("member {user_id} of {project_id}")));
        }
        let p = st.projects.get_mut(project_id).expect("checked");
        p.member_ids.remove(user_id);
        p.admin_ids.remove(user_id);
        let project = p.clone();
        if let Some(user) = st.users.get_mut(user_id) {
            if user.default_project_id.as_deref() == Some(project_id) {
                user.default_project_id = None;
            }
        }
        self.commit(&st)?;
        Ok(project)
    }

    // ---- users ---------------------------------------------------------

    pub fn create_user(&self, actor: &Actor, new: NewUser) -> Result<User> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let allowed = caller.is_admin()
            || (matches!(new.role, Role::Pi | Role::Regular)
                && !new.org_ids.is_empty()
                && new.org_ids.iter().all(|o| caller.manages_org(o)));
        if !allowed {
            return Err(denied("cannot create this user"));
        }
        for org in &new.org_ids {
            st.org(org)?;
        }
        if st.users.values().any(|u| u.username == new.username) {
            return Err(AccountingError::IntegrityViolation(format!(
                "username {} is taken",
                new.username
            )));
        }
        if let Some(id) = &new.user_id {
            if st.users.contains_key(id) {
                return Err(AccountingError::IntegrityViolation(format!("user {id} exists")));
            }
        }
        let user_id = match new.user_id {
            Some(id) => id,
            None => st.fresh_id("usr", |s, id| s.users.contains_key(id)),
        };
        let user = User {
            user_id: user_id.clone(),
            username: new.username,
            org_ids: new.org_ids,
            role: new.role,
            default_project_id: None,
            disabled: false,
        };
        st.users.insert(user_id, user.clone());
        self.commit(&st)?;
        drop(st);
        self.sync_user(&user, new.password.as_deref());
        Ok(user)
    }

    fn user_visible(st: &State, caller: CallerRef<'_>, user: &User) -> bool {
        if caller.is_admin() || caller.user_id() == Some(user.user_id.as_str()) {
            return true;
        }
        if user.org_ids.iter().any(|o| caller.manages_org(o)) {
            return true;
        }
        st.projects
            .values()
            .any(|p| caller.is_pi_of(p) && p.member_ids.contains(&user.user_id))
    }

    pub fn get_user(&self, actor: &Actor, user_id: &str) -> Result<User> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        let user = st.user(user_id)?;
        if !Self::user_visible(&st, caller, user) {
            return Err(denied(format!("user {user_id}")));
        }
        Ok(user.clone())
    }

    pub fn list_users(&self, actor: &Actor) -> Result<Vec<User>> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        Ok(st
            .users
            .values()
            .filter(|u| Self::user_visible(&st, caller, u))
            .cloned()
            .collect())
    }

    pub fn update_user(&self, actor: &Actor, user_id: &str, patch: UserPatch) -> Result<User> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let target = st.user(user_id)?;
        let is_self = caller.user_id() == Some(user_id);
        let manages = caller.is_admin()
            || (!target.org_ids.is_empty()
                && target.org_ids.iter().all(|o| caller.manages_org(o))
                && matches!(target.role, Role::Pi | Role::Regular));
        let admin_fields = patch.role.is_some() || patch.org_ids.is_some() || patch.disabled.is_some();
        if admin_fields && !manages {
            return Err(denied(format!("cannot change role, orgs or status of {user_id}")));
        }
        if !admin_fields && !manages && !is_self {
            return Err(denied(format!("cannot update {user_id}")));
        }
        if let Some(role) = patch.role {
            if matches!(role, Role::Admin | Role::OrgManager) && !caller.is_admin() {
                return Err(denied("only admins grant admin or org_manager"));
            }
        }
        if let Some(orgs) = &patch.org_ids {
            for org in orgs {
                st.org(org)?;
                if !caller.manages_org(org) {
                    return Err(denied(format!("cannot assign organisation {org}")));
                }
            }
        }
        if let Some(Some(pid)) = &patch.default_project_id {
            let project = st.project(pid)?;
            if !project.member_ids.contains(user_id) {
                return Err(AccountingError::IntegrityViolation(format!(
                    "user {user_id} is not a member of {pid}"
                )));
            }
        }
        let user = st.users.get_mut(user_id).expect("checked");
        if let Some(role) = patch.role {
            user.role = role;
        }
        if let Some(orgs) = patch.org_ids {
            user.org_ids = orgs;
        }
        if let Some(default) = patch.default_project_id {
            user.default_project_id = default;
        }
        if let Some(disabled) = patch.disabled {
            user.disabled = disabled;
        }
        let user = user.clone();
        self.commit(&st)?;
        drop(st);
        self.sync_user(&user, patch.password.as_deref());
        Ok(user)
    }

    pub fn delete_user(&self, actor: &Actor, user_id: &str) -> Result<()> {
        let mut st = self.state.lock();
        if !st.caller(actor)?.is_admin() {
            return Err(denied("only admins delete users"));
        }
        let user = st.user(user_id)?.clone();
        if st.has_jobs_for_user(user_id) {
            return Err(AccountingError::IntegrityViolation(format!(
                "user {user_id} has job history; disable instead"
            )));
        }
        st.users.remove(user_id);
        for p in st.projects.values_mut() {
            p.member_ids.remove(user_id);
            p.admin_ids.remove(user_id);
        }
        self.commit(&st)?;
        drop(st);
        self.sync_user(
            &User {
                disabled: true,
                ..user
            },
            None,
        );
        Ok(())
    }

    // ---- slots ---------------------------------------------------------

    fn check_slot_window(
        st: &State,
        org_id: &str,
        start: Timestamp,
        end: Timestamp,
        excluding: Option<&str>,
    ) -> Result<()> {
        if start >= end {
            return Err(AccountingError::InvalidInput("slot start must precede end".into()));
        }
        let clash = st.slots.values().any(|s| {
            Some(s.slot_id.as_str()) != excluding
                && s.org_id != org_id
                && overlaps(s.start, s.end, start, end)
        });
        if clash {
            return Err(AccountingError::Overlap("slot of another organisation".into()));
        }
        Ok(())
    }

    pub fn create_slot(&self, actor: &Actor, new: NewSlot) -> Result<PreAllocatedSlot> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        st.org(&new.org_id)?;
        if !caller.manages_org(&new.org_id) {
            return Err(denied(format!("cannot manage slots of {}", new.org_id)));
        }
        Self::check_slot_window(&st, &new.org_id, new.start, new.end, None)?;
        if let Some(id) = &new.slot_id {
            if st.slots.contains_key(id) {
                return Err(AccountingError::IntegrityViolation(format!("slot {id} exists")));
            }
        }
        let slot_id = match new.slot_id {
            Some(id) => id,
            None => st.fresh_id("slot", |s, id| s.slots.contains_key(id)),
        };
        let slot = PreAllocatedSlot {
            slot_id: slot_id.clone(),
            org_id: new.org_id,
            start: new.start,
            end: new.end,
        };
        st.slots.insert(slot_id, slot.clone());
        self.commit(&st)?;
        Ok(slot)
    }

    pub fn list_slots(&self, actor: &Actor) -> Result<Vec<PreAllocatedSlot>> {
        let st = self.state.lock();
        st.caller(actor)?;
        Ok(st.slots.values().cloned().collect())
    }

    fn reservation_inside_some_slot(st: &State, r: &Reservation, excluding: Option<&str>, replacement: Option<&PreAllocatedSlot>) -> bool {
        let org = st.projects.get(&r.project_id).map(|p| p.org_id.as_str());
        st.slots
            .values()
            .filter(|s| Some(s.slot_id.as_str()) != excluding)
            .chain(replacement)
            .any(|s| Some(s.org_id.as_str()) == org && s.contains(r.start, r.end))
    }

    pub fn update_slot(&self, actor: &Actor, slot_id: &str, patch: SlotPatch) -> Result<PreAllocatedSlot> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let slot = st
            .slots
            .get(slot_id)
            .ok_or_else(|| AccountingError::NotFound(format!("slot {slot_id}")))?
            .clone();
        if !caller.manages_org(&slot.org_id) {
            return Err(denied(format!("cannot manage slots of {}", slot.org_id)));
        }
        let updated = PreAllocatedSlot {
            start: patch.start.unwrap_or(slot.start),
            end: patch.end.unwrap_or(slot.end),
            ..slot
        };
        Self::check_slot_window(&st, &updated.org_id, updated.start, updated.end, Some(slot_id))?;
        let stranded = st
            .reservations
            .values()
            .any(|r| !Self::reservation_inside_some_slot(&st, r, Some(slot_id), Some(&updated)));
        if stranded {
            return Err(AccountingError::IntegrityViolation(
                "resizing would leave a reservation outside any slot".into(),
            ));
        }
        st.slots.insert(slot_id.to_string(), updated.clone());
        self.commit(&st)?;
        Ok(updated)
    }

    pub fn delete_slot(&self, actor: &Actor, slot_id: &str) -> Result<()> {
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let slot = st
            .slots
            .get(slot_id)
            .ok_or_else(|| AccountingError::NotFound(format!("slot {slot_id}")))?;
        if !caller.manages_org(&slot.org_id) {
            return Err(denied(format!("cannot manage slots of {}", slot.org_id)));
        }
        let stranded = st
            .reservations
            .values()
            .any(|r| !Self::reservation_inside_some_slot(&st, r, Some(slot_id), None));
        if stranded {
            return Err(AccountingError::IntegrityViolation(
                "slot still holds reservations".into(),
            ));
        }
        st.slots.remove(slot_id);
        self.commit(&st)
    }

    // ---- reservations --------------------------------------------------

    /// Places an exclusive window for a project. The window must sit inside
    /// one slot of the project's organisation, overlap no other reservation,
    /// and its full duration is debited from the project budget up front.
    pub fn create_reservation(&self, actor: &Actor, new: NewReservation) -> Result<Reservation> {
        let now = self.clock.now();
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let project = st
            .projects
            .get(&new.project_id)
            .ok_or_else(|| AccountingError::UnknownProject(new.project_id.clone()))?;
        if !(caller.is_admin() || caller.is_pi_of(project)) {
            return Err(denied(format!("only PIs of {} may reserve", new.project_id)));
        }
        if new.start >= new.end {
            return Err(AccountingError::InvalidInput("reservation start must precede end".into()));
        }
        let inside = st
            .slots
            .values()
            .any(|s| s.org_id == project.org_id && s.contains(new.start, new.end));
        if !inside {
            return Err(AccountingError::OutsideSlot);
        }
        if st
            .reservations
            .values()
            .any(|r| overlaps(r.start, r.end, new.start, new.end))
        {
            return Err(AccountingError::Overlap("reservation".into()));
        }
        let charged_ms = span_ms(new.start, new.end);
        if project.consumed_ms.saturating_add(charged_ms) > project.budget_ms {
            return Err(AccountingError::InsufficientBudget {
                needed_ms: charged_ms,
                remaining_ms: project.remaining_ms(),
            });
        }
        let reservation_id = st.fresh_id("rsv", |s, id| s.reservations.contains_key(id));
        let reservation = Reservation {
            reservation_id: reservation_id.clone(),
            project_id: new.project_id.clone(),
            start: new.start,
            end: new.end,
            charged_ms,
        };
        st.reservations.insert(reservation_id.clone(), reservation.clone());
        st.apply_consumption(
            now,
            TxKind::ReservationCharge,
            &new.project_id,
            &reservation_id,
            charged_ms as i64,
        );
        self.commit(&st)?;
        Ok(reservation)
    }

    /// Removes a reservation that has not started and refunds its charge.
    pub fn cancel_reservation(&self, actor: &Actor, reservation_id: &str) -> Result<Reservation> {
        let now = self.clock.now();
        let mut st = self.state.lock();
        let caller = st.caller(actor)?;
        let reservation = st
            .reservations
            .get(reservation_id)
            .ok_or_else(|| AccountingError::NotFound(format!("reservation {reservation_id}")))?
            .clone();
        let project = st.project(&reservation.project_id)?;
        if !(caller.is_admin() || caller.is_pi_of(project)) {
            return Err(denied(format!("only PIs of {} may cancel", reservation.project_id)));
        }
        if now >= reservation.start {
            return Err(AccountingError::AlreadyStarted);
        }
        st.reservations.remove(reservation_id);
        st.apply_consumption(
            now,
            TxKind::ReservationRefund,
            &reservation.project_id,
            reservation_id,
            -(reservation.charged_ms as i64),
        );
        self.commit(&st)?;
        Ok(reservation)
    }

    pub fn list_reservations(&self, actor: &Actor) -> Result<Vec<Reservation>> {
        let st = self.state.lock();
        st.caller(actor)?;
        Ok(st.reservations.values().cloned().collect())
    }

    // ---- jobs and reports ------------------------------------------------

    pub fn list_jobs(&self, actor: &Actor, project_id: Option<&str>) -> Result<Vec<JobLedgerRecord>> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        Ok(st
            .jobs
            .values()
            .filter(|j| project_id.is_none_or(|p| j.project_id == p))
            .filter(|j| {
                caller.user_id() == Some(j.user_id.as_str())
                    || st
                        .projects
                        .get(&j.project_id)
                        .is_some_and(|p| caller.manages_org(&p.org_id) || caller.is_pi_of(p))
            })
            .cloned()
            .collect())
    }

    pub fn get_job(&self, actor: &Actor, job_id: &str) -> Result<JobLedgerRecord> {
        self.list_jobs(actor, None)?
            .into_iter()
            .find(|j| j.job_id == job_id)
            .ok_or_else(|| AccountingError::NotFound(format!("job {job_id}")))
    }

    pub fn billing_report(
        &self,
        actor: &Actor,
        scope: &ReportScope,
        from: Timestamp,
        to: Timestamp,
    ) -> Result<BillingReport> {
        if from >= to {
            return Err(AccountingError::InvalidInput("report period must be non-empty".into()));
        }
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        let projects: Vec<&Project> = match scope {
            ReportScope::Org(org_id) => {
                st.org(org_id)?;
                if !caller.manages_org(org_id) {
                    return Err(denied(format!("report for {org_id}")));
                }
                st.projects.values().filter(|p| &p.org_id == org_id).collect()
            }
            ReportScope::Project(project_id) => {
                let p = st.project(project_id)?;
                if !(caller.manages_org(&p.org_id) || caller.is_pi_of(p)) {
                    return Err(denied(format!("report for {project_id}")));
                }
                vec![p]
            }
        };
        let ids: BTreeSet<&str> = projects.iter().map(|p| p.project_id.as_str()).collect();
        let jobs = st.jobs.values().filter(|j| ids.contains(j.project_id.as_str()));
        let reservations = st
            .reservations
            .values()
            .filter(|r| ids.contains(r.project_id.as_str()));
        Ok(report::build(scope.clone(), from, to, jobs, reservations))
    }

    // ---- audit accessors ---------------------------------------------------

    pub fn transactions(&self, actor: &Actor) -> Result<Vec<TxEntry>> {
        let st = self.state.lock();
        let caller = st.caller(actor)?;
        Ok(st
            .tx_log
            .iter()
            .filter(|t| caller.manages_org(&t.org_id))
            .cloned()
            .collect())
    }

    pub fn transaction_log(&self) -> Vec<TxEntry> {
        self.state.lock().tx_log.clone()
    }

    /// All job records, unfiltered.
    pub fn job_records(&self) -> Vec<JobLedgerRecord> {
        self.state.lock().jobs.values().cloned().collect()
    }

    pub fn project_snapshot(&self, project_id: &str) -> Option<Project> {
        self.state.lock().projects.get(project_id).cloned()
    }

    pub fn org_snapshot(&self, org_id: &str) -> Option<Organisation> {
        self.state.lock().orgs.get(org_id).cloned()
    }
}
