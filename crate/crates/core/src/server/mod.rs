//! Mock FHIR server: an in-memory store per instance, REST create, read and
//! search for the eight kinds, app registration and bearer-token auth.

mod auth;
mod routes;
mod snapshot;
mod store;

use std::collections::BTreeSet;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use auth::{
    constant_time_eq, sha256, to_hex, AccessToken, AppRegistration, AuthError, AuthState, Clock, ManualClock,
    RegisteredApp, SystemClock, CODE_TTL_SECS, TOKEN_TTL_SECS,
};
pub use routes::router;
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use store::{searchset_json, SearchQuery, Store, Stored};

use crate::fhir::ResourceKind;

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("config: {0}")]
    Config(String),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error("an app named `{0}` is already registered")]
    DuplicateApp(String),
    #[error("client id `{0}` is empty or already registered")]
    DuplicateClientId(String),
    #[error("app name `{0}` must be nonempty and free of control characters")]
    BadAppName(String),
    #[error("scope `{0}` must be nonempty and free of whitespace")]
    BadScope(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One app entry in a server config. The secret is given either in plain
/// text or as its SHA-256 hex digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub name: String,
    pub client_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_secret: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub client_secret_sha256: Option<String>,
    #[serde(default)]
    pub scopes: BTreeSet<String>,
}

impl AppConfig {
    fn to_registered(&self) -> Result<RegisteredApp, ServerError> {
        let secret_sha256 = match (&self.client_secret, &self.client_secret_sha256) {
            (Some(s), None) => sha256(s.as_bytes()),
            (None, Some(h)) => auth::from_hex32(h).ok_or_else(|| {
                ServerError::Config(format!(
                    "app `{}`: client_secret_sha256 is not 64 hex digits",
                    self.name
                ))
            })?,
            _ => {
                return Err(ServerError::Config(format!(
                    "app `{}`: give exactly one of client_secret and client_secret_sha256",
                    self.name
                )))
            }
        };
        Ok(RegisteredApp {
            client_id: self.client_id.clone(),
            app_name: self.name.clone(),
            secret_sha256,
            scopes: self.scopes.clone(),
        })
    }
}

/// Server config file (TOML).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    /// Role name, e.g. `sensitive` or `synthetic`.
    pub name: String,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub port: u16,
    /// Kinds answered with 404.
    #[serde(default)]
    pub disabled_kinds: Vec<ResourceKind>,
    /// Reject creates whose references point at nothing stored.
    #[serde(default)]
    pub strict_links: bool,
    /// Restored at start when present, written on shutdown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<PathBuf>,
    #[serde(default)]
    pub apps: Vec<AppConfig>,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

impl ServerConfig {
    pub fn new(name: impl Into<String>) -> ServerConfig {
        ServerConfig {
            name: name.into(),
            bind: default_bind(),
            port: 0,
            disabled_kinds: Vec::new(),
            strict_links: false,
            snapshot: None,
            apps: Vec::new(),
        }
    }

    pub fn from_toml(text: &str) -> Result<ServerConfig, ServerError> {
        let cfg: ServerConfig = toml::from_str(text).map_err(|e| ServerError::Config(e.to_string()))?;
        for app in &cfg.apps {
            app.to_registered()?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ServerConfig, ServerError> {
        let path = path.as_ref();
        let mut cfg = ServerConfig::from_toml(&std::fs::read_to_string(path)?)?;
        // A relative snapshot path is taken relative to the config file.
        if let (Some(snap), Some(dir)) = (&cfg.snapshot, path.parent()) {
            if snap.is_relative() {
                cfg.snapshot = Some(dir.join(snap));
            }
        }
        Ok(cfg)
    }

    pub fn addr(&self) -> Result<SocketAddr, ServerError> {
        format!("{}:{}", self.bind, self.port)
            .parse()
            .map_err(|e| ServerError::Config(format!("bind address: {e}")))
    }
}

/// Registers a new app in a config file and returns its credentials. Only
/// the secret digest is written back.
pub fn register_app(
    config_path: impl AsRef<Path>,
    name: &str,
    scopes: BTreeSet<String>,
) -> Result<AppRegistration, ServerError> {
    let path = config_path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ServerConfig::from_toml(&text)?;
    let mut registry = AuthState::default();
    for app in &cfg.apps {
        registry.insert(app.to_registered()?)?;
    }
    let reg = registry.register(name, scopes)?;
    cfg.apps.push(AppConfig {
        name: reg.app_name.clone(),
        client_id: reg.client_id.clone(),
        client_secret: None,
        client_secret_sha256: Some(to_hex(&sha256(reg.client_secret.as_bytes()))),
        scopes: reg.scopes.clone(),
    });
    write_atomically(path, &cfg.to_toml())?;
    Ok(reg)
}

fn write_atomically(path: &Path, text: &str) -> io::Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}

/// Behavior switches of one server instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServerOptions {
    pub name: String,
    pub disabled_kinds: BTreeSet<ResourceKind>,
    pub strict_links: bool,
}

pub(crate) struct Inner {
    pub(crate) options: ServerOptions,
    pub(crate) store: RwLock<Store>,
    pub(crate) auth: Mutex<AuthState>,
    pub(crate) clock: Arc<dyn Clock>,
}

/// Shared handle to one server's state. Cloning shares the store.
#[derive(Clone)]
pub struct FhirServer {
    pub(crate) inner: Arc<Inner>,
}

impl FhirServer {
    pub fn new(options: ServerOptions) -> FhirServer {
        FhirServer::with_clock(options, Arc::new(SystemClock))
    }

    pub fn with_clock(options: ServerOptions, clock: Arc<dyn Clock>) -> FhirServer {
        FhirServer {
            inner: Arc::new(Inner {
                options,
                store: RwLock::new(Store::new()),
                auth: Mutex::new(AuthState::default()),
                clock,
            }),
        }
    }

    /// Builds a server from config: restores the snapshot if the file
    /// exists, then adds config apps not already registered.
    pub fn from_config(cfg: &ServerConfig, clock: Arc<dyn Clock>) -> Result<FhirServer, ServerError> {
        let server = FhirServer::with_clock(
            ServerOptions {
                name: cfg.name.clone(),
                disabled_kinds: cfg.disabled_kinds.iter().copied().collect(),
                strict_links: cfg.strict_links,
            },
            clock,
        );
        if let Some(path) = cfg.snapshot.as_ref().filter(|p| p.exists()) {
            server.restore(path)?;
        }
        {
            let mut auth = server.auth();
            for app in &cfg.apps {
                if auth.apps.contains_key(&app.client_id) {
                    continue;
                }
                auth.insert(app.to_registered()?)?;
            }
        }
        Ok(server)
    }

    pub fn options(&self) -> &ServerOptions {
        &self.inner.options
    }

    pub fn name(&self) -> &str {
        &self.inner.options.name
    }

    pub fn now(&self) -> u64 {
        self.inner.clock.now()
    }

    pub fn is_enabled(&self, kind: ResourceKind) -> bool {
        !self.inner.options.disabled_kinds.contains(&kind)
    }

    pub(crate) fn auth(&self) -> std::sync::MutexGuard<'_, AuthState> {
        self.inner.auth.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, Store> {
        self.inner.store.read().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn store_mut(&self) -> std::sync::RwLockWriteGuard<'_, Store> {
        self.inner.store.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn register_app(&self, name: &str, scopes: BTreeSet<String>) -> Result<AppRegistration, ServerError> {
        self.auth().register(name, scopes)
    }

    pub fn issue_token(&self, client_id: &str, secret: &str) -> Result<AccessToken, AuthError> {
        let now = self.now();
        self.auth().issue_token(client_id, secret, now)
    }

    pub fn snapshot_text(&self) -> String {
        // Lock order: store, then auth.
        let store = self.store();
        let auth = self.auth();
        write_snapshot(&store, &auth)
    }

    pub fn snapshot(&self, path: impl AsRef<Path>) -> Result<(), ServerError> {
        write_atomically(path.as_ref(), &self.snapshot_text())?;
        Ok(())
    }

    /// Replaces the store and app registry with a snapshot's. Live tokens
    /// and codes are kept.
    pub fn restore_text(&self, text: &str) -> Result<(), ServerError> {
        let (new_store, apps) = read_snapshot(text)?;
        let mut store = self.store_mut();
        let mut auth = self.auth();
        auth.apps.clear();
        for app in apps {
            auth.insert(app)?;
        }
        *store = new_store;
        Ok(())
    }

    pub fn restore(&self, path: impl AsRef<Path>) -> Result<(), ServerError> {
        self.restore_text(&std::fs::read_to_string(path)?)
    }
}

/// A server listening on a local port, stopped by [`RunningServer::shutdown`].
pub struct RunningServer {
    pub addr: SocketAddr,
    pub server: FhirServer,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl RunningServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        (&mut self.task).await.map_err(io::Error::other)?
    }
}

/// Binds `addr` (port 0 picks a free one) and serves in a background task.
pub async fn spawn(server: FhirServer, addr: SocketAddr) -> io::Result<RunningServer> {
    let (addr, stop, task) = serve_router(router(server.clone()), addr).await?;
    tracing::info!(name = server.name(), %addr, "fhir server listening");
    Ok(RunningServer {
        addr,
        server,
        stop: Some(stop),
        task,
    })
}

pub(crate) type ServeHandle = (SocketAddr, oneshot::Sender<()>, JoinHandle<io::Result<()>>);

/// Serves a router until the returned sender fires or is dropped.
pub(crate) async fn serve_router(app: axum::Router, addr: SocketAddr) -> io::Result<ServeHandle> {
    let listener = TcpListener::bind(addr).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok((addr, stop, task))
}

#[cfg(test)]
mod tests;
