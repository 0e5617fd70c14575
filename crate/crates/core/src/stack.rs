//! Wires every service together on loopback listeners: the mock device on
//! its own port, and one edge listener carrying `/auth`, `/api`, `/store`
//! and the gateway at the root.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use tokio::net::TcpListener;
use url::Url;

use crate::accounting::{self, Accounting, Actor, User};
use crate::authn::{self, Authn, TokenPair};
use crate::clock::{self, Clock};
use crate::gateway::{ActiveJobs, Gateway, GatewayConfig, RetryPolicy, Services};
use crate::ledger::{FairnessConfig, FairnessLedger, MemoryCounterStore, DEFAULT_S_MAX};
use crate::mock::{self, DeviceConfig, MockDevice};
use crate::plugin::{PluginConfig, PluginRegistry};
use crate::reporter::{Reporter, ReporterConfig};
use crate::server::RunningServer;
use crate::store::{self, FsArtifactStore};

pub struct StackConfig {
    pub clock: Arc<dyn Clock>,
    pub device: DeviceConfig,
    pub s_max: u64,
    pub signing_key: Vec<u8>,
    pub service_token: String,
    pub backend_token: String,
    pub vendor_plugin: String,
    pub site_plugin: String,
    pub registry: PluginRegistry,
    pub edge_addr: String,
    pub device_addr: String,
    /// Artifact root; a temporary directory when unset.
    pub store_root: Option<PathBuf>,
    /// Accounting snapshot file; in-memory when unset.
    pub accounting_path: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub dead_letter_path: Option<PathBuf>,
    pub reporter: ReporterConfig,
    /// Run the reporter loop in the background.
    pub spawn_reporter: bool,
    /// Let the device work through its queue on a timer.
    pub auto_advance: Option<Duration>,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            clock: clock::system(),
            device: DeviceConfig::default(),
            s_max: DEFAULT_S_MAX,
            signing_key: b"local-signing-key".to_vec(),
            service_token: "service-token".into(),
            backend_token: "backend-token".into(),
            vendor_plugin: mock::PLUGIN_NAME.into(),
            site_plugin: crate::plugin::REFERENCE_SITE.into(),
            registry: PluginRegistry::builtin(),
            edge_addr: "127.0.0.1:0".into(),
            device_addr: "127.0.0.1:0".into(),
            store_root: None,
            accounting_path: None,
            retry: RetryPolicy {
                attempts: 5,
                base_delay: Duration::from_millis(20),
            },
            dead_letter_path: None,
            reporter: ReporterConfig::default(),
            spawn_reporter: false,
            auto_advance: None,
        }
    }
}

pub struct Stack {
    pub clock: Arc<dyn Clock>,
    pub device: Arc<MockDevice>,
    pub accounting: Arc<Accounting>,
    pub authn: Arc<Authn>,
    pub counters: Arc<MemoryCounterStore>,
    pub store: Arc<FsArtifactStore>,
    pub gateway: Arc<Gateway>,
    pub reporter: Arc<Reporter>,
    pub service_token: String,
    pub backend_token: String,
    device_server: RunningServer,
    edge_server: RunningServer,
    tasks: Vec<tokio::task::JoinHandle<()>>,
    _tmp: Option<tempfile::TempDir>,
}

impl std::fmt::Debug for Stack {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stack")
            .field("edge", &self.edge_url().as_str())
            .field("device", &self.device_url().as_str())
            .finish_non_exhaustive()
    }
}

fn sub_url(base: &Url, prefix: &str) -> Url {
    base.join(prefix).expect("valid prefix")
}

impl Stack {
    pub async fn start(config: StackConfig) -> anyhow::Result<Self> {
        let clock = config.clock.clone();

        let mut device_config = config.device.clone();
        device_config.service_token = Some(config.service_token.clone());
        let device = Arc::new(MockDevice::new(device_config, clock.clone()).map_err(anyhow::Error::msg)?);
        let device_server = RunningServer::bind(&config.device_addr, mock::http::router(device.clone()))
            .await
            .context("binding device listener")?;

        let edge_listener = TcpListener::bind(&config.edge_addr)
            .await
            .context("binding edge listener")?;
        let edge_url = Url::parse(&format!("http://{}/", edge_listener.local_addr()?))?;

        let authn = Arc::new(Authn::new(&config.signing_key, clock.clone()));
        let accounting = match &config.accounting_path {
            Some(path) => Accounting::open(path, clock.clone())?,
            None => Accounting::in_memory(clock.clone()),
        };
        let accounting = Arc::new(accounting.with_directory(authn.credentials()));

        let (store_root, tmp) = match &config.store_root {
            Some(root) => (root.clone(), None),
            None => {
                let dir = tempfile::tempdir()?;
                (dir.path().to_path_buf(), Some(dir))
            }
        };
        let store = Arc::new(FsArtifactStore::new(store_root, sub_url(&edge_url, "store/"))?);

        let plugin_config = PluginConfig {
            vendor_plugin_name: config.vendor_plugin.clone(),
            site_plugin_name: config.site_plugin.clone(),
            vendor_base_url: device_server.url(),
            site_backend_url: sub_url(&edge_url, "api/"),
            vendor_token: config.service_token.clone(),
            site_backend_token: config.backend_token.clone(),
            store_public_url: sub_url(&edge_url, "store/"),
        };
        let plugins = config.registry.load(&plugin_config)?;

        let counters = Arc::new(MemoryCounterStore::new());
        let services = Services {
            vendor: plugins.vendor,
            site: plugins.site,
            ledger: FairnessLedger::new(counters.clone(), FairnessConfig::new(config.s_max).map_err(anyhow::Error::msg)?),
            store: store.clone(),
            active: Arc::new(ActiveJobs::new()),
            clock: clock.clone(),
        };
        let mut gateway_config = GatewayConfig::new(device_server.url(), config.service_token.clone());
        gateway_config.retry = config.retry;
        gateway_config.dead_letter_path = config.dead_letter_path.clone();
        let gateway = Gateway::new(services.clone(), authn.clone(), gateway_config)?;
        let reporter = Arc::new(Reporter::new(services, config.reporter));

        let edge = gateway
            .router()
            .nest("/auth", authn::router(authn.clone()))
            .nest(
                "/api",
                accounting::router(accounting.clone(), authn.clone(), &config.backend_token),
            )
            .nest("/store", store::http::router(store.clone(), None))
            .nest("/_reporter", reporter.router());
        let edge_server = RunningServer::serve(edge_listener, edge);

        let mut tasks = Vec::new();
        if config.spawn_reporter {
            tasks.push(reporter.spawn());
        }
        if let Some(period) = config.auto_advance {
            tasks.push(device.spawn_auto_advance(period));
        }

        Ok(Self {
            clock,
            device,
            accounting,
            authn,
            counters,
            store,
            gateway,
            reporter,
            service_token: config.service_token,
            backend_token: config.backend_token,
            device_server,
            edge_server,
            tasks,
            _tmp: tmp,
        })
    }

    /// Where clients point their SDK.
    pub fn edge_url(&self) -> Url {
        self.edge_server.url()
    }

    pub fn device_url(&self) -> Url {
        self.device_server.url()
    }

    pub fn api_url(&self) -> Url {
        sub_url(&self.edge_url(), "api/")
    }

    pub fn auth_url(&self) -> Url {
        sub_url(&self.edge_url(), "auth/")
    }

    pub fn services(&self) -> &Services {
        self.gateway.services()
    }

    /// Tokens for an existing accounting user, bypassing the password grant.
    pub fn tokens_for(&self, user_id: &str) -> anyhow::Result<TokenPair> {
        let user: User = self.accounting.get_user(&Actor::Service, user_id)?;
        Ok(self
            .authn
            .issue_pair(&user.user_id, &user.username, &[user.role.as_str().to_string()]))
    }

    pub fn access_token(&self, user_id: &str) -> anyhow::Result<String> {
        Ok(self.tokens_for(user_id)?.access_token)
    }

    pub async fn shutdown(self) {
        for t in &self.tasks {
            t.abort();
        }
        self.edge_server.shutdown().await;
        self.device_server.shutdown().await;
    }
}
