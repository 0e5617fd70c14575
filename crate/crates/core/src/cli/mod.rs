//! Command-line surfaces: `login`, `admin ...`, and `serve`.
//!
//! Exit codes: 0 success, 1 authentication or network failure, 2 invalid
//! input, 3 forbidden, 4 not found, 5 conflict.

mod api;
mod tokens;

pub use api::{ApiClient, CliError};
pub use tokens::{default_tokens_path, TokensFile};

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use url::Url;

#[derive(Debug, Parser)]
#[command(name = "qpu-gatekeeper", version, about = "Policy gateway for a shared quantum computer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Obtain tokens and write the tokens file.
    Login(LoginArgs),
    /// Manage organisations, projects, users, slots and reservations.
    Admin(AdminArgs),
    /// Run the full stack (gateway, accounting, auth, store, reporter, mock device).
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ServerArgs {
    /// Gateway base URL.
    #[arg(long = "server", env = "GATEWAY_SERVER_URL", global = true)]
    pub server: Option<Url>,
    /// Config file providing `server_url` when neither flag nor env is set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tokens_path: Option<PathBuf>,
}

impl ServerArgs {
    fn tokens_path(&self) -> PathBuf {
        self.tokens_path.clone().unwrap_or_else(default_tokens_path)
    }

    fn server(&self) -> Result<Url, CliError> {
        if let Some(url) = &self.server {
            return Ok(url.clone());
        }
        let path = self
            .config
            .clone()
            .unwrap_or_else(|| default_tokens_path().with_file_name("config.json"));
        let raw = std::fs::read(&path).map_err(|_| {
            CliError::new(2, "no server URL: pass --server, set GATEWAY_SERVER_URL, or add server_url to the config file")
        })?;
        let cfg: Value = serde_json::from_slice(&raw).map_err(|e| CliError::new(2, format!("{}: {e}", path.display())))?;
        cfg["server_url"]
            .as_str()
            .and_then(|s| Url::parse(s).ok())
            .ok_or_else(|| CliError::new(2, format!("{}: missing or invalid server_url", path.display())))
    }
}

#[derive(Debug, Args)]
pub struct LoginArgs {
    #[command(flatten)]
    pub server: ServerArgs,
    #[arg(long)]
    pub username: String,
    /// Read from GATEKEEPER_PASSWORD or the first line of stdin when omitted.
    #[arg(long, env = "GATEKEEPER_PASSWORD", hide_env_values = true)]
    pub password: Option<String>,
}

#[derive(Debug, Args)]
pub struct AdminArgs {
    #[command(flatten)]
    pub server: ServerArgs,
    /// Access token; overrides the tokens file.
    #[arg(long, env = "GATEKEEPER_TOKEN", hide_env_values = true, global = true)]
    pub token: Option<String>,
    /// Print raw JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: AdminCommand,
}

#[derive(Debug, Subcommand)]
pub enum AdminCommand {
    #[command(subcommand)]
    Org(OrgCommand),
    #[command(subcommand)]
    Project(ProjectCommand),
    #[command(subcommand)]
    User(UserCommand),
    #[command(subcommand)]
    Slot(SlotCommand),
    #[command(subcommand)]
    Reservation(ReservationCommand),
    #[command(subcommand)]
    Budget(BudgetCommand),
    /// Usage report for an organisation or project over [from, to).
    Report {
        #[arg(long, conflicts_with = "project", required_unless_present = "project")]
        org: Option<String>,
        #[arg(long)]
        project: Option<String>,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Job records visible to the caller.
    Jobs {
        #[arg(long)]
        project: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum OrgCommand {
    Create {
        #[arg(long)]
        name: String,
        #[arg(long)]
        budget_ms: u64,
        #[arg(long)]
        id: Option<String>,
    },
    List,
    Update {
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        budget_ms: Option<u64>,
        #[arg(long)]
        disabled: Option<bool>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ProjectCommand {
    Create {
        #[arg(long)]
        org: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        budget_ms: u64,
        #[arg(long)]
        id: Option<String>,
    },
    List,
    Update {
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        budget_ms: Option<u64>,
        #[arg(long)]
        disabled: Option<bool>,
    },
    AddMember {
        id: String,
        #[arg(long)]
        user: String,
        #[arg(long)]
        pi: bool,
    },
    RemoveMember {
        id: String,
        #[arg(long)]
        user: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum UserCommand {
    Create {
        #[arg(long)]
        username: String,
        #[arg(long, default_value = "regular")]
        role: String,
        #[arg(long = "org")]
        orgs: Vec<String>,
        #[arg(long)]
        password: Option<String>,
        #[arg(long)]
        id: Option<String>,
    },
    List,
    Update {
        id: String,
        #[arg(long)]
        role: Option<String>,
        #[arg(long = "org")]
        orgs: Vec<String>,
        #[arg(long)]
        default_project: Option<String>,
        #[arg(long)]
        disabled: Option<bool>,
        #[arg(long)]
        password: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SlotCommand {
    Create {
        #[arg(long)]
        org: String,
        #[arg(long)]
        start: String,
        #[arg(long)]
        end: String,
    },
    List,
    Update {
        id: String,
        #[arg(long)]
        start: Option<String>,
        #[arg(long)]
        end: Option<String>,
    },
    Delete {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReservationCommand {
    Create {
        #[arg(long)]
        project: String,
        #[arg(long)]
        start: String,
        #[arg(long)]
        end: String,
    },
    List,
    Cancel {
        id: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum BudgetCommand {
    Set {
        #[arg(long)]
        project: String,
        #[arg(long)]
        budget_ms: u64,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "LISTEN_ADDR", default_value = "127.0.0.1:8080")]
    pub listen: String,
    #[arg(long, env = "DEVICE_LISTEN_ADDR", default_value = "127.0.0.1:9000")]
    pub device_listen: String,
    /// Holds accounting state and artifacts; temporary when omitted.
    #[arg(long, env = "DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, env = "AUTH_SIGNING_KEY", default_value = "local-signing-key", hide_env_values = true)]
    pub signing_key: String,
    #[arg(long, env = "SERVICE_TOKEN", default_value = "service-token", hide_env_values = true)]
    pub service_token: String,
    #[arg(long, env = "SITE_BACKEND_TOKEN", default_value = "backend-token", hide_env_values = true)]
    pub backend_token: String,
    #[arg(long, env = "FAIRNESS_SMAX", default_value_t = crate::ledger::DEFAULT_S_MAX)]
    pub s_max: u64,
    #[arg(long, env = "VENDOR_PLUGIN", default_value = crate::mock::PLUGIN_NAME)]
    pub vendor_plugin: String,
    #[arg(long, env = "SITE_PLUGIN", default_value = crate::plugin::REFERENCE_SITE)]
    pub site_plugin: String,
    #[arg(long, env = "REPORTER_INTERVAL_MS", default_value_t = 1000)]
    pub reporter_interval_ms: u64,
    /// Milliseconds between mock device queue ticks.
    #[arg(long, default_value_t = 500)]
    pub device_tick_ms: u64,
    /// Create an admin `name:password` at startup.
    #[arg(long)]
    pub bootstrap_admin: Option<String>,
}

/// Parses arguments, runs the command, returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.exit_code
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Login(args) => login(args),
        Command::Admin(args) => admin(args),
        Command::Serve(args) => serve(args),
    }
}

fn read_password() -> Result<String, CliError> {
    let mut line = String::new();
    std::io::stdin()
        .read_line(&mut line)
        .map_err(|e| CliError::new(1, e.to_string()))?;
    Ok(line.trim_end_matches(['\r', '\n']).to_string())
}

fn login(args: LoginArgs) -> Result<(), CliError> {
    let server = args.server.server()?;
    let password = match args.password {
        Some(p) => p,
        None => read_password()?,
    };
    let (auth_url, pair) = api::password_grant(&server, &args.username, &password)?;
    let path = args.server.tokens_path();
    TokensFile {
        access_token: pair.access_token,
        refresh_token: pair.refresh_token,
        auth_server_url: auth_url.to_string(),
        expires_at: Some(pair.expires_at),
    }
    .save(&path)
    .map_err(|e| CliError::new(1, format!("cannot write {}: {e}", path.display())))?;
    println!(
        "logged in as {}; tokens written to {}; access token expires at {}",
        args.username,
        path.display(),
        pair.expires_at.format("%Y-%m-%dT%H:%M:%SZ")
    );
    Ok(())
}

/// Drops `null` members so patches only carry what was given.
fn compact(mut v: Value) -> Value {
    if let Value::Object(map) = &mut v {
        map.retain(|_, x| !x.is_null());
    }
    v
}

fn admin(args: AdminArgs) -> Result<(), CliError> {
    let server = args.server.server()?;
    let mut api = ApiClient::new(&server, args.token.clone(), args.server.tokens_path())?;
    let (value, columns): (Value, &[&str]) = match args.command {
        AdminCommand::Org(cmd) => {
            let cols: &[&str] = &["org_id", "name", "yearly_budget_ms", "consumed_ms", "disabled"];
            let v = match cmd {
                OrgCommand::Create { name, budget_ms, id } => {
                    api.post("orgs", &compact(json!({"org_id": id, "name": name, "yearly_budget_ms": budget_ms})))?
                }
                OrgCommand::List => api.get("orgs", &[])?,
                OrgCommand::Update { id, name, budget_ms, disabled } => api.patch(
                    &format!("orgs/{id}"),
                    &compact(json!({"name": name, "yearly_budget_ms": budget_ms, "disabled": disabled})),
                )?,
            };
            (v, cols)
        }
        AdminCommand::Project(cmd) => {
            let cols: &[&str] = &["project_id", "org_id", "name", "budget_ms", "consumed_ms", "member_ids", "admin_ids"];
            let v = match cmd {
                ProjectCommand::Create { org, name, budget_ms, id } => {
                    let name = name.or_else(|| id.clone()).unwrap_or_else(|| "project".into());
                    api.post(
                        "projects",
                        &compact(json!({"project_id": id, "org_id": org, "name": name, "budget_ms": budget_ms})),
                    )?
                }
                ProjectCommand::List => api.get("projects", &[])?,
                ProjectCommand::Update { id, name, budget_ms, disabled } => api.patch(
                    &format!("projects/{id}"),
                    &compact(json!({"name": name, "budget_ms": budget_ms, "disabled": disabled})),
                )?,
                ProjectCommand::AddMember { id, user, pi } => {
                    api.post(&format!("projects/{id}/members"), &json!({"user_id": user, "pi": pi}))?
                }
                ProjectCommand::RemoveMember { id, user } => api.delete(&format!("projects/{id}/members/{user}"))?,
            };
            (v, cols)
        }
        AdminCommand::User(cmd) => {
            let cols: &[&str] = &["user_id", "username", "role", "org_ids", "default_project_id", "disabled"];
            let v = match cmd {
                UserCommand::Create { username, role, orgs, password, id } => api.post(
                    "users",
                    &compact(json!({
                        "user_id": id, "username": username, "role": role,
                        "org_ids": orgs, "password": password,
                    })),
                )?,
                UserCommand::List => api.get("users", &[])?,
                UserCommand::Update { id, role, orgs, default_project, disabled, password } => {
                    let orgs = (!orgs.is_empty()).then_some(orgs);
                    api.patch(
                        &format!("users/{id}"),
                        &compact(json!({
                            "role": role, "org_ids": orgs, "default_project_id": default_project,
                            "disabled": disabled, "password": password,
                        })),
                    )?
                }
            };
            (v, cols)
        }
        AdminCommand::Slot(cmd) => {
            let cols: &[&str] = &["slot_id", "org_id", "start", "end"];
            let v = match cmd {
                SlotCommand::Create { org, start, end } => {
                    api.post("slots", &json!({"org_id": org, "start": start, "end": end}))?
                }
                SlotCommand::List => api.get("slots", &[])?,
                SlotCommand::Update { id, start, end } => {
                    api.patch(&format!("slots/{id}"), &compact(json!({"start": start, "end": end})))?
                }
                SlotCommand::Delete { id } => api.delete(&format!("slots/{id}"))?,
            };
            (v, cols)
        }
        AdminCommand::Reservation(cmd) => {
            let cols: &[&str] = &["reservation_id", "project_id", "start", "end", "charged_ms"];
            let v = match cmd {
                ReservationCommand::Create { project, start, end } => {
                    api.post("reservations", &json!({"project_id": project, "start": start, "end": end}))?
                }
                ReservationCommand::List => api.get("reservations", &[])?,
                ReservationCommand::Cancel { id } => api.delete(&format!("reservations/{id}"))?,
            };
            (v, cols)
        }
        AdminCommand::Budget(BudgetCommand::Set { project, budget_ms }) => (
            api.patch(&format!("projects/{project}"), &json!({"budget_ms": budget_ms}))?,
            &["project_id", "budget_ms", "consumed_ms"],
        ),
        AdminCommand::Report { org, project, from, to } => {
            let mut q = vec![("from", from), ("to", to)];
            if let Some(o) = org {
                q.push(("org", o));
            }
            if let Some(p) = project {
                q.push(("project", p));
            }
            let v = api.get("reports", &q)?;
            if args.json {
                println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            } else {
                print_report(&v);
            }
            return Ok(());
        }
        AdminCommand::Jobs { project } => {
            let q: Vec<(&str, String)> = project.map(|p| ("project", p)).into_iter().collect();
            (
                api.get("jobs", &q)?,
                &["job_id", "user_id", "project_id", "status", "qpu_time_ms", "charged_ms", "submitted_at"],
            )
        }
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&value).expect("json"));
    } else if !value.is_null() {
        print!("{}", table(&value, columns));
    }
    Ok(())
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(cell).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

/// Left-aligned columns separated by two spaces.
pub fn table(value: &Value, columns: &[&str]) -> String {
    let rows: Vec<&Value> = match value {
        Value::Array(items) => items.iter().collect(),
        other => vec![other],
    };
    let mut grid = vec![columns.iter().map(|c| c.to_uppercase()).collect::<Vec<_>>()];
    grid.extend(rows.iter().map(|r| columns.iter().map(|c| cell(&r[*c])).collect()));
    let widths: Vec<usize> = (0..columns.len())
        .map(|i| grid.iter().map(|row| row[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in grid {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn print_report(v: &Value) {
    let scope = format!("{} {}", cell(&v["scope"]), cell(&v["id"]));
    println!("report    {scope}");
    println!("period    {} .. {}", cell(&v["from"]), cell(&v["to"]));
    for key in [
        "job_count",
        "completed_jobs",
        "failed_jobs",
        "total_qpu_ms",
        "uncharged_qpu_ms",
        "reservation_count",
        "reservation_ms",
    ] {
        println!("{key:<18}{}", cell(&v[key]));
    }
    if let Some(users) = v["per_user"].as_object() {
        let rows: Vec<Value> = users
            .iter()
            .map(|(u, usage)| {
                let mut row = usage.clone();
                row["user"] = Value::String(u.clone());
                row
            })
            .collect();
        println!();
        print!("{}", table(&Value::Array(rows), &["user", "job_count", "charged_qpu_ms", "uncharged_qpu_ms"]));
    }
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    use crate::accounting::{Actor, NewUser, Role};
    use crate::stack::{Stack, StackConfig};

    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new(1, e.to_string()))?;
    runtime.block_on(async move {
        let mut config = StackConfig {
            edge_addr: args.listen,
            device_addr: args.device_listen,
            signing_key: args.signing_key.into_bytes(),
            service_token: args.service_token,
            backend_token: args.backend_token,
            s_max: args.s_max,
            vendor_plugin: args.vendor_plugin,
            site_plugin: args.site_plugin,
            spawn_reporter: true,
            auto_advance: Some(Duration::from_millis(args.device_tick_ms)),
            ..StackConfig::default()
        };
        config.reporter.interval = Duration::from_millis(args.reporter_interval_ms);
        if let Some(dir) = &args.data_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::new(1, e.to_string()))?;
            config.store_root = Some(dir.join("artifacts"));
            config.accounting_path = Some(dir.join("accounting.json"));
            config.dead_letter_path = Some(dir.join("dead-letters.jsonl"));
        }
        let stack = Stack::start(config)
            .await
            .map_err(|e| CliError::new(1, format!("startup failed: {e:#}")))?;
        if let Some(pair) = args.bootstrap_admin {
            let (name, password) = pair
                .split_once(':')
                .ok_or_else(|| CliError::new(2, "--bootstrap-admin expects name:password"))?;
            let created = stack.accounting.create_user(
                &Actor::Service,
                NewUser {
                    user_id: Some(name.to_string()),
                    username: name.to_string(),
                    org_ids: Default::default(),
                    role: Role::Admin,
                    password: Some(password.to_string()),
                },
            );
            if created.is_err() {
                // Already present from a previous run; refresh its password.
                let _ = stack.accounting.update_user(
                    &Actor::Service,
                    name,
                    crate::accounting::UserPatch {
                        password: Some(password.to_string()),
                        ..Default::default()
                    },
                );
            }
        }
        tracing::info!(gateway = %stack.edge_url(), device = %stack.device_url(), "serving");
        tokio::signal::ctrl_c().await.map_err(|e| CliError::new(1, e.to_string()))?;
        stack.shutdown().await;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_columns() {
        let v = json!([{"a": "x", "b": 1}, {"a": "longer", "b": null}]);
        assert_eq!(table(&v, &["a", "b"]), "A       B\nx       1\nlonger  -\n");
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::try_parse_from([
            "qpu-gatekeeper", "admin", "--server", "http://x/", "project", "create", "--org", "o1", "--budget-ms", "3600000",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Admin(_)));
    }
}
