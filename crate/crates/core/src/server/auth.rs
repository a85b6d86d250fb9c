use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServerError;

pub const TOKEN_TTL_SECS: u64 = 3600;
pub const CODE_TTL_SECS: u64 = 120;

/// Source of the current time in whole seconds, injectable for tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start: u64) -> Self {
        ManualClock(AtomicU64::new(start))
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }

    pub fn set(&self, now: u64) {
        self.0.store(now, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Credentials handed out once, at registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AppRegistration {
    pub client_id: String,
    pub client_secret: String,
    pub app_name: String,
    pub scopes: BTreeSet<String>,
}

/// What the server keeps about an app: the secret only as a SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisteredApp {
    pub client_id: String,
    pub app_name: String,
    pub secret_sha256: [u8; 32],
    pub scopes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessToken {
    pub token: String,
    pub client_id: String,
    /// Unix seconds after which the token authorizes nothing.
    pub expiry: u64,
    pub scopes: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("unknown client or wrong secret")]
    InvalidClient,
    #[error("missing bearer token")]
    MissingToken,
    #[error("invalid bearer token")]
    InvalidToken,
    #[error("expired bearer token")]
    ExpiredToken,
    #[error("unknown or already used authorization code")]
    InvalidCode,
    #[error("expired authorization code")]
    ExpiredCode,
    #[error("authorization code was issued to another client")]
    ClientMismatch,
}

struct PendingCode {
    client_id: String,
    expiry: u64,
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn from_hex32(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Equality whose running time does not depend on where inputs differ.
pub fn constant_time_eq(a: &[u8; 32], b: &[u8; 32]) -> bool {
    a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// 128 random bits as 32 hex digits.
pub fn random_hex128() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

pub(super) fn check_app_name(name: &str) -> Result<(), ServerError> {
    if name.trim().is_empty() || name.chars().any(char::is_control) {
        return Err(ServerError::BadAppName(name.to_string()));
    }
    Ok(())
}

pub(super) fn check_scopes(scopes: &BTreeSet<String>) -> Result<(), ServerError> {
    match scopes
        .iter()
        .find(|s| s.is_empty() || s.chars().any(|c| c.is_whitespace() || c.is_control()))
    {
        Some(bad) => Err(ServerError::BadScope(bad.clone())),
        None => Ok(()),
    }
}

/// Registered apps, live tokens and pending authorization codes.
#[derive(Default)]
pub struct AuthState {
    pub(super) apps: BTreeMap<String, RegisteredApp>,
    tokens: HashMap<String, AccessToken>,
    codes: HashMap<String, PendingCode>,
}

impl AuthState {
    pub fn apps(&self) -> impl Iterator<Item = &RegisteredApp> {
        self.apps.values()
    }

    pub fn register(&mut self, name: &str, scopes: BTreeSet<String>) -> Result<AppRegistration, ServerError> {
        check_app_name(name)?;
        check_scopes(&scopes)?;
        if self.apps.values().any(|a| a.app_name == name) {
            return Err(ServerError::DuplicateApp(name.to_string()));
        }
        let mut client_id = random_hex128();
        while self.apps.contains_key(&client_id) {
            client_id = random_hex128();
        }
        let client_secret = format!("{}{}", random_hex128(), random_hex128());
        self.insert(RegisteredApp {
            client_id: client_id.clone(),
            app_name: name.to_string(),
            secret_sha256: sha256(client_secret.as_bytes()),
            scopes: scopes.clone(),
        })?;
        Ok(AppRegistration {
            client_id,
            client_secret,
            app_name: name.to_string(),
            scopes,
        })
    }

    /// Adds an app with known credentials, as loaded from config or snapshot.
    pub fn insert(&mut self, app: RegisteredApp) -> Result<(), ServerError> {
        check_app_name(&app.app_name)?;
        check_scopes(&app.scopes)?;
        if self.apps.contains_key(&app.client_id) || app.client_id.is_empty() {
            return Err(ServerError::DuplicateClientId(app.client_id));
        }
        if self.apps.values().any(|a| a.app_name == app.app_name) {
            return Err(ServerError::DuplicateApp(app.app_name));
        }
        self.apps.insert(app.client_id.clone(), app);
        Ok(())
    }

    fn authenticate(&self, client_id: &str, secret: &str) -> Result<&RegisteredApp, AuthError> {
        let digest = sha256(secret.as_bytes());
        match self.apps.get(client_id) {
            Some(app) if constant_time_eq(&app.secret_sha256, &digest) => Ok(app),
            _ => Err(AuthError::InvalidClient),
        }
    }

    fn mint(&mut self, client_id: String, scopes: BTreeSet<String>, now: u64) -> AccessToken {
        let token = AccessToken {
            token: random_hex128(),
            client_id,
            expiry: now + TOKEN_TTL_SECS,
            scopes,
        };
        self.tokens.retain(|_, t| t.expiry > now);
        self.tokens.insert(token.token.clone(), token.clone());
        token
    }

    /// Client-credentials grant.
    pub fn issue_token(&mut self, client_id: &str, secret: &str, now: u64) -> Result<AccessToken, AuthError> {
        let app = self.authenticate(client_id, secret)?;
        let (id, scopes) = (app.client_id.clone(), app.scopes.clone());
        Ok(self.mint(id, scopes, now))
    }

    pub fn authorize(&mut self, client_id: &str, now: u64) -> Result<String, AuthError> {
        if !self.apps.contains_key(client_id) {
            return Err(AuthError::InvalidClient);
        }
        self.codes.retain(|_, c| c.expiry > now);
        let code = random_hex128();
        self.codes.insert(
            code.clone(),
            PendingCode {
                client_id: client_id.to_string(),
                expiry: now + CODE_TTL_SECS,
            },
        );
        Ok(code)
    }

    /// Redeems a code. Any attempt consumes it, successful or not.
    pub fn exchange(&mut self, code: &str, client_id: &str, secret: &str, now: u64) -> Result<AccessToken, AuthError> {
        let pending = self.codes.remove(code).ok_or(AuthError::InvalidCode)?;
        if pending.expiry <= now {
            return Err(AuthError::ExpiredCode);
        }
        let app = self.authenticate(client_id, secret)?;
        if pending.client_id != app.client_id {
            return Err(AuthError::ClientMismatch);
        }
        let (id, scopes) = (app.client_id.clone(), app.scopes.clone());
        Ok(self.mint(id, scopes, now))
    }

    pub fn check_token(&self, token: &str, now: u64) -> Result<&AccessToken, AuthError> {
        let t = self.tokens.get(token).ok_or(AuthError::InvalidToken)?;
        if t.expiry <= now {
            return Err(AuthError::ExpiredToken);
        }
        Ok(t)
    }
}
