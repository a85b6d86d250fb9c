//! Client for servers speaking the mock FHIR interface: token handling,
//! bundle upload with local-to-server id rewriting and linked-graph
//! download.

mod client;
mod graph;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use client::{FhirClient, RetryPolicy};
pub use graph::group_by_encounter;

use crate::fhir::{Bundle, FhirError, ResourceId, ResourceKind, ValidationReport};

/// Where a server lives and how to authenticate to it.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerCredentials {
    pub base_url: String,
    /// Defaults to `<base_url>/token`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_endpoint: Option<String>,
    pub client_id: String,
    pub client_secret: String,
}

impl ServerCredentials {
    pub fn new(base_url: impl Into<String>, client_id: impl Into<String>, client_secret: impl Into<String>) -> Self {
        ServerCredentials {
            base_url: base_url.into(),
            token_endpoint: None,
            client_id: client_id.into(),
            client_secret: client_secret.into(),
        }
    }

    pub fn token_url(&self) -> String {
        self.token_endpoint
            .clone()
            .unwrap_or_else(|| format!("{}/token", self.base_url.trim_end_matches('/')))
    }
}

/// The secret never reaches logs or error messages.
impl fmt::Debug for ServerCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ServerCredentials")
            .field("base_url", &self.base_url)
            .field("token_endpoint", &self.token_url())
            .field("client_id", &self.client_id)
            .field("client_secret", &"<redacted>")
            .finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("invalid base url `{0}`")]
    BadUrl(String),
    #[error("server `{server}` unreachable after {attempts} attempts: {message}")]
    Network {
        server: String,
        attempts: u32,
        message: String,
    },
    #[error("server `{server}` rejected the credentials: {message}")]
    Auth { server: String, message: String },
    #[error("server `{server}`: {what} not found")]
    NotFound { server: String, what: String },
    #[error("server `{server}` answered {status} to {request}: {message}")]
    Http {
        server: String,
        status: u16,
        request: String,
        message: String,
    },
    #[error("server `{server}` sent an unreadable {what}: {source}")]
    BadResponse {
        server: String,
        what: String,
        source: FhirError,
    },
    #[error("bundle fails validation: {0}")]
    InvalidBundle(ValidationReport),
    #[error("{from} references {target}, which does not precede it in upload order")]
    OrderViolation { from: ResourceId, target: ResourceId },
    #[error("{from} references {target}, whose kind is excluded from upload")]
    ExcludedTarget { from: ResourceId, target: ResourceId },
    #[error("upload stopped at {failed} after {} resources were created: {cause}", uploaded.len())]
    PartialUpload {
        uploaded: IdMap,
        failed: ResourceId,
        cause: Box<AdapterError>,
    },
    #[error("fetching {kind}: {cause}")]
    Fetch {
        kind: ResourceKind,
        cause: Box<AdapterError>,
    },
    #[error("server `{server}` holds {from}, which references missing {target}")]
    DanglingOnServer {
        server: String,
        from: ResourceId,
        target: ResourceId,
    },
}

impl AdapterError {
    /// The server a failure is attributed to, if any.
    pub fn server(&self) -> Option<&str> {
        match self {
            AdapterError::Network { server, .. }
            | AdapterError::Auth { server, .. }
            | AdapterError::NotFound { server, .. }
            | AdapterError::Http { server, .. }
            | AdapterError::BadResponse { server, .. }
            | AdapterError::DanglingOnServer { server, .. } => Some(server),
            AdapterError::PartialUpload { cause, .. } | AdapterError::Fetch { cause, .. } => cause.server(),
            _ => None,
        }
    }

    pub fn is_network(&self) -> bool {
        match self {
            AdapterError::Network { .. } => true,
            AdapterError::PartialUpload { cause, .. } | AdapterError::Fetch { cause, .. } => cause.is_network(),
            _ => false,
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, AdapterError::NotFound { .. })
    }
}

/// Local id to server id, per kind.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    map: BTreeMap<ResourceId, ResourceId>,
    targets: BTreeSet<ResourceId>,
}

impl IdMap {
    pub fn new() -> IdMap {
        IdMap::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, local: &ResourceId) -> Option<&ResourceId> {
        self.map.get(local)
    }

    /// Records a pair. Panics if either side is already mapped, which would
    /// break injectivity.
    pub fn insert(&mut self, local: ResourceId, server: ResourceId) {
        assert_eq!(local.kind(), server.kind(), "id map pairs share a kind");
        assert!(self.targets.insert(server.clone()), "server id {server} mapped twice");
        let prev = self.map.insert(local.clone(), server);
        assert!(prev.is_none(), "local id {local} mapped twice");
    }

    pub fn extend(&mut self, other: IdMap) {
        for (l, s) in other.map {
            self.insert(l, s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ResourceId, &ResourceId)> {
        self.map.iter()
    }

    /// Renames every mapped id and reference in a bundle.
    pub fn apply(&self, b: &Bundle) -> Bundle {
        let mut out = b.clone();
        for r in &mut out.resources {
            if let Some(s) = self.map.get(&r.id()) {
                r.set_id(s.value().to_string());
            }
            for (_, target) in r.references_mut() {
                if let Some(s) = self.map.get(target) {
                    *target = s.clone();
                }
            }
        }
        out
    }

    /// `{"Kind": {"local": "server", ...}, ...}`, the recovery manifest
    /// printed after a partial upload.
    pub fn to_json(&self) -> String {
        let mut by_kind: BTreeMap<&str, BTreeMap<&str, &str>> = BTreeMap::new();
        for (l, s) in &self.map {
            by_kind
                .entry(l.kind().as_str())
                .or_default()
                .insert(l.value(), s.value());
        }
        serde_json::to_string_pretty(&by_kind).expect("id map serializes")
    }
}
