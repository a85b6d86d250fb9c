//! Line-oriented snapshot of a server: registrations, id counters and
//! every stored resource. Layout is documented in `docs/snapshot.md`.

use std::collections::BTreeSet;

use super::auth::{from_hex32, to_hex, AuthState, RegisteredApp};
use super::store::{Store, Stored};
use super::ServerError;
use crate::fhir::ResourceKind;

pub const SNAPSHOT_MAGIC: &str = "fhirsynth-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Serializes the store and app registry. Output is deterministic: apps by
/// client id, counters and resources in kind order, resources by id.
pub fn write_snapshot(store: &Store, auth: &AuthState) -> String {
    let mut out = format!("{SNAPSHOT_MAGIC}\t{SNAPSHOT_VERSION}\n");
    for app in auth.apps() {
        let scopes: Vec<&str> = app.scopes.iter().map(String::as_str).collect();
        out.push_str(&format!(
            "app\t{}\t{}\t{}\t{}\n",
            app.client_id,
            app.app_name,
            to_hex(&app.secret_sha256),
            scopes.join(" ")
        ));
    }
    for kind in ResourceKind::ALL {
        out.push_str(&format!("counter\t{kind}\t{}\n", store.counter(kind)));
    }
    for kind in ResourceKind::ALL {
        for s in store.iter(kind) {
            out.push_str(&format!(
                "resource\t{kind}\t{}\t{}\n",
                s.resource.id_value(),
                s.canonical
            ));
        }
    }
    out
}

/// Parses a snapshot. Any malformed line fails with its 1-based number.
pub fn read_snapshot(text: &str) -> Result<(Store, Vec<RegisteredApp>), ServerError> {
    let err = |line: usize, reason: String| ServerError::Snapshot { line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l == format!("{SNAPSHOT_MAGIC}\t{SNAPSHOT_VERSION}") => {}
        Some((n, l)) => {
            return Err(err(
                n,
                format!("expected header `{SNAPSHOT_MAGIC}<TAB>{SNAPSHOT_VERSION}`, found `{l}`"),
            ))
        }
        None => return Err(err(1, "empty snapshot".into())),
    }
    let mut store = Store::new();
    let mut apps = Vec::new();
    let mut scratch = AuthState::default();
    let mut counters_seen = BTreeSet::new();
    for (n, line) in lines {
        let fields: Vec<&str> = line.splitn(5, '\t').collect();
        match fields.as_slice() {
            ["app", client_id, name, hash, scopes] => {
                let secret_sha256 =
                    from_hex32(hash).ok_or_else(|| err(n, "secret digest is not 64 hex digits".into()))?;
                let app = RegisteredApp {
                    client_id: client_id.to_string(),
                    app_name: name.to_string(),
                    secret_sha256,
                    scopes: scopes.split(' ').filter(|s| !s.is_empty()).map(String::from).collect(),
                };
                scratch.insert(app.clone()).map_err(|e| err(n, e.to_string()))?;
                apps.push(app);
            }
            ["counter", kind, value] => {
                let kind: ResourceKind = kind
                    .parse()
                    .map_err(|e: crate::fhir::FhirError| err(n, e.to_string()))?;
                let value: u64 = value
                    .parse()
                    .map_err(|_| err(n, format!("counter `{value}` is not an integer")))?;
                if !counters_seen.insert(kind) {
                    return Err(err(n, format!("second counter for {kind}")));
                }
                store.set_counter(kind, value);
            }
            ["resource", kind, id, body] => {
                let kind: ResourceKind = kind
                    .parse()
                    .map_err(|e: crate::fhir::FhirError| err(n, e.to_string()))?;
                let stored = Stored::from_canonical(body).map_err(|e| err(n, e))?;
                if stored.resource.kind() != kind || stored.resource.id_value() != *id {
                    return Err(err(
                        n,
                        format!("line names {kind}/{id} but holds {}", stored.resource.id()),
                    ));
                }
                store.insert(stored).map_err(|e| err(n, e))?;
            }
            _ => return Err(err(n, format!("unrecognized line `{}`", truncate(line)))),
        }
    }
    Ok((store, apps))
}

fn truncate(s: &str) -> String {
    match s.char_indices().nth(60) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}
