use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::*;
use crate::authn::Authn;
use crate::clock::{iso_ms, Timestamp};
use crate::plugin::JobReport;

#[derive(Clone)]
struct Api {
    accounting: Arc<Accounting>,
    authn: Arc<Authn>,
    service_token: Arc<str>,
}

/// Error wrapper rendering `{"error": code, "detail": text}`.
struct ApiError(StatusCode, String, String);

impl From<AccountingError> for ApiError {
    fn from(e: AccountingError) -> Self {
        let status = match &e {
            AccountingError::NotAuthorised(_) => StatusCode::FORBIDDEN,
            AccountingError::NotFound(_) | AccountingError::UnknownProject(_) => StatusCode::NOT_FOUND,
            AccountingError::InvalidInput(_) => StatusCode::BAD_REQUEST,
            AccountingError::Persistence(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        ApiError(status, e.code().to_string(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1, "detail": self.2}))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

impl FromRequestParts<Api> for Actor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, api: &Api) -> Result<Self, Self::Rejection> {
        let header = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        if header.and_then(|h| h.strip_prefix("Bearer ")) == Some(&*api.service_token) {
            return Ok(Actor::Service);
        }
        api.authn
            .validate_bearer(header)
            .map(|claims| Actor::User(claims.sub))
            .map_err(|e| ApiError(StatusCode::UNAUTHORIZED, e.code().into(), e.to_string()))
    }
}

fn service_only(actor: &Actor) -> Result<(), ApiError> {
    match actor {
        Actor::Service => Ok(()),
        Actor::User(_) => Err(AccountingError::NotAuthorised("service endpoint".into()).into()),
    }
}

/// The site backend API. Callers authenticate with either the shared
/// service token or a user access token.
pub fn router(accounting: Arc<Accounting>, authn: Arc<Authn>, service_token: &str) -> Router {
    let api = Api {
        accounting,
        authn,
        service_token: service_token.into(),
    };
    Router::new()
        .route("/jobAuthoriser", post(job_authoriser))
        .route("/jobReporter", post(job_reporter))
        .route("/me", get(me))
        .route("/orgs", get(list_orgs).post(create_org))
        .route("/orgs/{id}", get(get_org).patch(update_org).delete(delete_org))
        .route("/projects", get(list_projects).post(create_project))
        .route(
            "/projects/{id}",
            get(get_project).patch(update_project).delete(delete_project),
        )
        .route("/projects/{id}/members", post(add_member))
        .route("/projects/{id}/members/{user_id}", delete(remove_member))
        .route("/users", get(list_users).post(create_user))
        .route("/users/{id}", get(get_user).patch(update_user).delete(delete_user))
        .route("/slots", get(list_slots).post(create_slot))
        .route("/slots/{id}", axum::routing::patch(update_slot).delete(delete_slot))
        .route("/reservations", get(list_reservations).post(create_reservation))
        .route("/reservations/{id}", delete(cancel_reservation))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/reports", get(report))
        .route("/transactions", get(transactions))
        .with_state(api)
}

async fn job_authoriser(
    State(api): State<Api>,
    actor: Actor,
    Json(req): Json<AuthoriseRequest>,
) -> ApiResult<crate::plugin::JobAuthorizationResult> {
    service_only(&actor)?;
    Ok(Json(api.accounting.authorise_job(&req)))
}

#[derive(Serialize)]
struct Ack {
    ack: ReportAck,
}

async fn job_reporter(
    State(api): State<Api>,
    actor: Actor,
    Json(report): Json<JobReport>,
) -> ApiResult<Ack> {
    service_only(&actor)?;
    Ok(Json(Ack {
        ack: api.accounting.report_job(&report)?,
    }))
}

async fn me(State(api): State<Api>, actor: Actor) -> ApiResult<User> {
    match &actor {
        Actor::User(id) => Ok(Json(api.accounting.get_user(&actor, id)?)),
        Actor::Service => Err(AccountingError::NotFound("service identity".into()).into()),
    }
}

async fn list_orgs(State(api): State<Api>, actor: Actor) -> ApiResult<Vec<Organisation>> {
    Ok(Json(api.accounting.list_orgs(&actor)?))
}

async fn create_org(
    State(api): State<Api>,
    actor: Actor,
    Json(new): Json<NewOrganisation>,
) -> Result<(StatusCode, Json<Organisation>), ApiError> {
    Ok((StatusCode::CREATED, Json(api.accounting.create_org(&actor, new)?)))
}

async fn get_org(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> ApiResult<Organisation> {
    Ok(Json(api.accounting.get_org(&actor, &id)?))
}

async fn update_org(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
    Json(patch): Json<OrganisationPatch>,
) -> ApiResult<Organisation> {
    Ok(Json(api.accounting.update_org(&actor, &id, patch)?))
}

async fn delete_org(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    api.accounting.delete_org(&actor, &id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_projects(State(api): State<Api>, actor: Actor) -> ApiResult<Vec<Project>> {
    Ok(Json(api.accounting.list_projects(&actor)?))
}

async fn create_project(
    State(api): State<Api>,
    actor: Actor,
    Json(new): Json<NewProject>,
) -> Result<(StatusCode, Json<Project>), ApiError> {
    Ok((StatusCode::CREATED, Json(api.accounting.create_project(&actor, new)?)))
}

async fn get_project(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> ApiResult<Project> {
    Ok(Json(api.accounting.get_project(&actor, &id)?))
}

async fn update_project(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
    Json(patch): Json<ProjectPatch>,
) -> ApiResult<Project> {
    Ok(Json(api.accounting.update_project(&actor, &id, patch)?))
}

async fn delete_project(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    api.accounting.delete_project(&actor, &id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn add_member(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
    Json(m): Json<Membership>,
) -> ApiResult<Project> {
    Ok(Json(api.accounting.add_member(&actor, &id, m)?))
}

async fn remove_member(
    State(api): State<Api>,
    actor: Actor,
    Path((id, user_id)): Path<(String, String)>,
) -> ApiResult<Project> {
    Ok(Json(api.accounting.remove_member(&actor, &id, &user_id)?))
}

async fn list_users(State(api): State<Api>, actor: Actor) -> ApiResult<Vec<User>> {
    Ok(Json(api.accounting.list_users(&actor)?))
}

async fn create_user(
    State(api): State<Api>,
    actor: Actor,
    Json(new): Json<NewUser>,
) -> Result<(StatusCode, Json<User>), ApiError> {
    Ok((StatusCode::CREATED, Json(api.accounting.create_user(&actor, new)?)))
}

async fn get_user(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> ApiResult<User> {
    Ok(Json(api.accounting.get_user(&actor, &id)?))
}

async fn update_user(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
    Json(patch): Json<UserPatch>,
) -> ApiResult<User> {
    Ok(Json(api.accounting.update_user(&actor, &id, patch)?))
}

async fn delete_user(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    api.accounting.delete_user(&actor, &id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_slots(State(api): State<Api>, actor: Actor) -> ApiResult<Vec<PreAllocatedSlot>> {
    Ok(Json(api.accounting.list_slots(&actor)?))
}

async fn create_slot(
    State(api): State<Api>,
    actor: Actor,
    Json(new): Json<NewSlot>,
) -> Result<(StatusCode, Json<PreAllocatedSlot>), ApiError> {
    Ok((StatusCode::CREATED, Json(api.accounting.create_slot(&actor, new)?)))
}

async fn update_slot(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
    Json(patch): Json<SlotPatch>,
) -> ApiResult<PreAllocatedSlot> {
    Ok(Json(api.accounting.update_slot(&actor, &id, patch)?))
}

async fn delete_slot(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    api.accounting.delete_slot(&actor, &id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_reservations(State(api): State<Api>, actor: Actor) -> ApiResult<Vec<Reservation>> {
    Ok(Json(api.accounting.list_reservations(&actor)?))
}

async fn create_reservation(
    State(api): State<Api>,
    actor: Actor,
    Json(new): Json<NewReservation>,
) -> Result<(StatusCode, Json<Reservation>), ApiError> {
    Ok((StatusCode::CREATED, Json(api.accounting.create_reservation(&actor, new)?)))
}

async fn cancel_reservation(
    State(api): State<Api>,
    actor: Actor,
    Path(id): Path<String>,
) -> ApiResult<Reservation> {
    Ok(Json(api.accounting.cancel_reservation(&actor, &id)?))
}

#[derive(Deserialize)]
struct JobFilter {
    project: Option<String>,
}

async fn list_jobs(
    State(api): State<Api>,
    actor: Actor,
    Query(filter): Query<JobFilter>,
) -> ApiResult<Vec<JobLedgerRecord>> {
    Ok(Json(api.accounting.list_jobs(&actor, filter.project.as_deref())?))
}

async fn get_job(State(api): State<Api>, actor: Actor, Path(id): Path<String>) -> ApiResult<JobLedgerRecord> {
    Ok(Json(api.accounting.get_job(&actor, &id)?))
}

#[derive(Deserialize)]
struct ReportQuery {
    org: Option<String>,
    project: Option<String>,
    #[serde(with = "iso_ms")]
    from: Timestamp,
    #[serde(with = "iso_ms")]
    to: Timestamp,
}

async fn report(
    State(api): State<Api>,
    actor: Actor,
    Query(q): Query<ReportQuery>,
) -> ApiResult<BillingReport> {
    let scope = match (q.org, q.project) {
        (Some(org), None) => ReportScope::Org(org),
        (None, Some(project)) => ReportScope::Project(project),
        _ => {
            return Err(AccountingError::InvalidInput(
                "exactly one of org or project is required".into(),
            )
            .into())
        }
    };
    Ok(Json(api.accounting.billing_report(&actor, &scope, q.from, q.to)?))
}

async fn transactions(State(api): State<Api>, actor: Actor) -> ApiResult<Vec<TxEntry>> {
    Ok(Json(api.accounting.transactions(&actor)?))
}
