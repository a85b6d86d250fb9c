use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fhir::{parse_resource, FhirResource, ParseMode};

fn res(json: &str) -> FhirResource {
    parse_resource(json, ParseMode::Strict).unwrap()
}

fn patient() -> FhirResource {
    res(r#"{"resourceType":"Patient","id":"x","gender":"female"}"#)
}

fn condition(patient: &str, code: &str) -> FhirResource {
    res(&format!(
        r#"{{"resourceType":"Condition","id":"x","subject":{{"reference":"Patient/{patient}"}},"code":"{code}"}}"#
    ))
}

fn scopes(s: &[&str]) -> BTreeSet<String> {
    s.iter().map(|x| x.to_string()).collect()
}

#[test]
fn registration_gives_distinct_credentials() {
    let mut auth = AuthState::default();
    let a = auth.register("cdss", scopes(&["patient/*.read"])).unwrap();
    let b = auth.register("adapter", BTreeSet::new()).unwrap();
    assert_ne!(a.client_id, b.client_id);
    assert_ne!(a.client_secret, b.client_secret);
    assert_eq!(a.client_id.len(), 32);
    assert!(matches!(
        auth.register("cdss", BTreeSet::new()),
        Err(ServerError::DuplicateApp(_))
    ));
    assert!(matches!(
        auth.register("  ", BTreeSet::new()),
        Err(ServerError::BadAppName(_))
    ));
    assert!(matches!(
        auth.register("x", scopes(&["a b"])),
        Err(ServerError::BadScope(_))
    ));
}

#[test]
fn tokens_expire_and_need_the_right_secret() {
    let mut auth = AuthState::default();
    let reg = auth.register("cdss", BTreeSet::new()).unwrap();
    assert_eq!(
        auth.issue_token(&reg.client_id, "wrong", 0).unwrap_err(),
        AuthError::InvalidClient
    );
    assert_eq!(
        auth.issue_token("nobody", &reg.client_secret, 0).unwrap_err(),
        AuthError::InvalidClient
    );
    let t = auth.issue_token(&reg.client_id, &reg.client_secret, 1000).unwrap();
    assert_eq!(t.token.len(), 32);
    assert_eq!(t.expiry, 1000 + TOKEN_TTL_SECS);
    assert!(auth.check_token(&t.token, 1000 + TOKEN_TTL_SECS - 1).is_ok());
    assert_eq!(
        auth.check_token(&t.token, 1000 + TOKEN_TTL_SECS).unwrap_err(),
        AuthError::ExpiredToken
    );
    assert_eq!(auth.check_token("feed", 1000).unwrap_err(), AuthError::InvalidToken);
}

#[test]
fn codes_are_single_use_bound_and_short_lived() {
    let mut auth = AuthState::default();
    let a = auth.register("a", BTreeSet::new()).unwrap();
    let b = auth.register("b", BTreeSet::new()).unwrap();

    let code = auth.authorize(&a.client_id, 0).unwrap();
    assert!(auth.exchange(&code, &a.client_id, &a.client_secret, 10).is_ok());
    assert_eq!(
        auth.exchange(&code, &a.client_id, &a.client_secret, 11).unwrap_err(),
        AuthError::InvalidCode
    );

    let code = auth.authorize(&a.client_id, 0).unwrap();
    assert_eq!(
        auth.exchange(&code, &b.client_id, &b.client_secret, 1).unwrap_err(),
        AuthError::ClientMismatch
    );

    let code = auth.authorize(&a.client_id, 0).unwrap();
    assert_eq!(
        auth.exchange(&code, &a.client_id, &a.client_secret, CODE_TTL_SECS)
            .unwrap_err(),
        AuthError::ExpiredCode
    );
    assert_eq!(auth.authorize("nobody", 0).unwrap_err(), AuthError::InvalidClient);
}

#[test]
fn constant_time_equality() {
    let a = sha256(b"a");
    let mut b = a;
    assert!(constant_time_eq(&a, &b));
    b[31] ^= 1;
    assert!(!constant_time_eq(&a, &b));
}

#[test]
fn ids_are_prefixed_per_kind_counters() {
    let mut store = Store::new();
    assert_eq!(store.create(patient()).resource.id_value(), "pat-1");
    assert_eq!(store.create(patient()).resource.id_value(), "pat-2");
    assert_eq!(store.create(condition("pat-1", "I10")).resource.id_value(), "cond-1");
    assert_eq!(store.counter(ResourceKind::Patient), 2);
    let body = store.get(ResourceKind::Patient, "pat-1").unwrap().canonical.clone();
    assert_eq!(body, r#"{"resourceType":"Patient","id":"pat-1","gender":"female"}"#);
}

#[test]
fn search_by_patient_in_id_order() {
    let mut store = Store::new();
    for _ in 0..2 {
        store.create(patient());
    }
    // Eleven conditions so that natural order differs from string order.
    for i in 0..11 {
        let p = if i % 5 == 1 { "pat-2" } else { "pat-1" };
        store.create(condition(p, "I10"));
    }
    let q = |patient: &str, count: Option<usize>| SearchQuery {
        patient: Some(patient.into()),
        encounter: None,
        count,
    };
    let (hits, total) = store.search(ResourceKind::Condition, &q("pat-2", None));
    let ids: Vec<&str> = hits.iter().map(|s| s.resource.id_value()).collect();
    assert_eq!(ids, vec!["cond-2", "cond-7"]);
    assert_eq!(total, 2);
    let (hits, total) = store.search(ResourceKind::Condition, &q("pat-1", None));
    let ids: Vec<&str> = hits.iter().map(|s| s.resource.id_value()).collect();
    assert_eq!(
        ids,
        vec!["cond-1", "cond-3", "cond-4", "cond-5", "cond-6", "cond-8", "cond-9", "cond-10", "cond-11"]
    );
    assert_eq!(total, 9);
    let (hits, total) = store.search(ResourceKind::Condition, &q("pat-1", Some(1)));
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].resource.id_value(), "cond-1");
    assert_eq!(total, 9);
    assert!(store.search(ResourceKind::Condition, &q("pat-9", None)).0.is_empty());
    let (hits, _) = store.search(ResourceKind::Patient, &q("pat-2", None));
    assert_eq!(hits.len(), 1);
    assert_eq!(
        searchset_json(&[], 0),
        r#"{"resourceType":"Bundle","type":"searchset","total":0,"entry":[]}"#
    );
}

fn populated() -> FhirServer {
    let s = FhirServer::new(ServerOptions::default());
    s.register_app("cdss", scopes(&["patient/*.read", "system/*.write"]))
        .unwrap();
    s.register_app("adapter", BTreeSet::new()).unwrap();
    let mut store = s.store_mut();
    for i in 0..12 {
        store.create(patient());
        store.create(condition(&format!("pat-{}", i / 2 + 1), "J44"));
    }
    drop(store);
    s
}

#[test]
fn snapshot_round_trips_exactly() {
    let s = populated();
    let text = s.snapshot_text();
    assert!(text.starts_with("fhirsynth-snapshot\t1\n"));
    let t = FhirServer::new(ServerOptions::default());
    t.restore_text(&text).unwrap();
    assert_eq!(*t.store(), *s.store());
    assert_eq!(t.snapshot_text(), text);
    let apps: Vec<RegisteredApp> = s.auth().apps().cloned().collect();
    let restored: Vec<RegisteredApp> = t.auth().apps().cloned().collect();
    assert_eq!(apps, restored);
}

#[test]
fn restore_then_create_continues_the_counter() {
    let s = populated();
    let t = FhirServer::new(ServerOptions::default());
    t.restore_text(&s.snapshot_text()).unwrap();
    assert_eq!(t.store_mut().create(patient()).resource.id_value(), "pat-13");
}

#[test]
fn ids_are_not_reused_even_when_the_counter_lags() {
    let s = populated();
    let text = s.snapshot_text().replace("counter\tPatient\t12", "counter\tPatient\t3");
    let t = FhirServer::new(ServerOptions::default());
    t.restore_text(&text).unwrap();
    assert_eq!(t.store_mut().create(patient()).resource.id_value(), "pat-13");
}

#[test]
fn corrupt_line_is_named() {
    let text = populated().snapshot_text();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[7] = "resource\tPatient\tpat-99\t{not json".into();
    match FhirServer::new(ServerOptions::default()).restore_text(&lines.join("\n")) {
        Err(ServerError::Snapshot { line, .. }) => assert_eq!(line, 8),
        other => panic!("expected a snapshot error, got {other:?}"),
    }
    for (bad, line) in [
        ("garbage", 1),
        ("fhirsynth-snapshot\t1\ncounter\tPatient\tx", 2),
        ("fhirsynth-snapshot\t1\ncounter\tObservation\t1", 2),
        (
            "fhirsynth-snapshot\t1\nresource\tPatient\tpat-2\t{\"resourceType\":\"Patient\",\"id\":\"pat-1\"}",
            2,
        ),
        ("fhirsynth-snapshot\t1\n\nx", 2),
        ("", 1),
    ] {
        match read_snapshot(bad) {
            Err(ServerError::Snapshot { line: l, .. }) => assert_eq!(l, line, "{bad:?}"),
            other => panic!("{bad:?} gave {other:?}"),
        }
    }
    // A non-canonical body would not snapshot back byte-identically.
    let spaced = "fhirsynth-snapshot\t1\nresource\tPatient\tpat-1\t{\"resourceType\": \"Patient\",\"id\":\"pat-1\"}";
    assert!(read_snapshot(spaced).is_err());
}

/// Replaying the tail of an operation log on a mid-sequence snapshot gives
/// the same store as running the whole log.
#[test]
fn replay_on_restored_snapshot_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ops: Vec<u32> = (0..400).map(|_| rng.random_range(0..3)).collect();
    let apply = |s: &FhirServer, op: u32, i: usize| {
        let mut store = s.store_mut();
        match op {
            0 => {
                store.create(patient());
            }
            1 => {
                let n = store.counter(ResourceKind::Patient).max(1);
                store.create(condition(&format!("pat-{}", i as u64 % n + 1), "I50"));
            }
            _ => {
                let _ = store.search(ResourceKind::Condition, &SearchQuery::default());
            }
        }
    };
    let full = FhirServer::new(ServerOptions::default());
    let mut mid = None;
    for (i, &op) in ops.iter().enumerate() {
        if i == 173 {
            mid = Some(full.snapshot_text());
        }
        apply(&full, op, i);
    }
    let replay = FhirServer::new(ServerOptions::default());
    replay.restore_text(&mid.unwrap()).unwrap();
    for (i, &op) in ops.iter().enumerate().skip(173) {
        apply(&replay, op, i);
    }
    assert_eq!(*replay.store(), *full.store());
    assert_eq!(replay.snapshot_text(), full.snapshot_text());
}

#[test]
fn config_parses_and_registration_persists_a_digest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("server.toml");
    std::fs::write(
        &path,
        r#"
name = "sensitive"
port = 0
disabled_kinds = ["Medication"]
strict_links = true
snapshot = "sensitive.snap"

[[apps]]
name = "adapter"
client_id = "adapter-id"
client_secret = "s3cret"
"#,
    )
    .unwrap();
    let reg = register_app(&path, "cdss", scopes(&["patient/*.read"])).unwrap();
    assert!(matches!(
        register_app(&path, "cdss", BTreeSet::new()),
        Err(ServerError::DuplicateApp(_))
    ));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains(&reg.client_secret));
    assert!(text.contains(&to_hex(&sha256(reg.client_secret.as_bytes()))));

    let cfg = ServerConfig::load(&path).unwrap();
    assert_eq!(
        cfg.snapshot.as_deref(),
        Some(dir.path().join("sensitive.snap").as_path())
    );
    let server = FhirServer::from_config(&cfg, Arc::new(ManualClock::new(0))).unwrap();
    assert!(!server.is_enabled(ResourceKind::Medication));
    assert!(server.options().strict_links);
    assert!(server.issue_token("adapter-id", "s3cret").is_ok());
    assert!(server.issue_token(&reg.client_id, &reg.client_secret).is_ok());
    assert!(server.issue_token(&reg.client_id, "s3cret").is_err());

    assert!(ServerConfig::from_toml("name = \"x\"\nunknown = 1").is_err());
    assert!(ServerConfig::from_toml("name = \"x\"\n[[apps]]\nname=\"a\"\nclient_id=\"b\"").is_err());
}
