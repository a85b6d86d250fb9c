#![allow(dead_code)]

pub mod tables;

use std::collections::BTreeSet;
use std::sync::Arc;

use fhirsynth::adapter::{FhirClient, RetryPolicy, ServerCredentials};
use fhirsynth::fhir::ResourceKind;
use fhirsynth::server::{spawn, AppRegistration, Clock, FhirServer, RunningServer, ServerOptions, SystemClock};

pub struct Harness {
    pub running: RunningServer,
    pub app: AppRegistration,
}

impl Harness {
    pub fn creds(&self) -> ServerCredentials {
        ServerCredentials::new(self.running.base_url(), &self.app.client_id, &self.app.client_secret)
    }

    pub fn client(&self) -> FhirClient {
        FhirClient::new(self.running.server.name().to_string(), self.creds())
            .unwrap()
            .with_retry(fast_retry())
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.running.base_url(), path)
    }
}

pub fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        retries: 3,
        base_delay: std::time::Duration::from_millis(5),
    }
}

pub async fn start(name: &str, disabled: &[ResourceKind], strict_links: bool) -> Harness {
    start_with_clock(name, disabled, strict_links, Arc::new(SystemClock)).await
}

pub async fn start_with_clock(
    name: &str,
    disabled: &[ResourceKind],
    strict_links: bool,
    clock: Arc<dyn Clock>,
) -> Harness {
    let server = FhirServer::with_clock(
        ServerOptions {
            name: name.to_string(),
            disabled_kinds: disabled.iter().copied().collect(),
            strict_links,
        },
        clock,
    );
    let app = server.register_app("test-client", BTreeSet::new()).unwrap();
    let running = spawn(server, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    Harness { running, app }
}

/// A local port with nothing listening on it.
pub fn dead_port() -> u16 {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.local_addr().unwrap().port()
}

pub fn http() -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .redirect(reqwest::redirect::Policy::none())
        .build()
        .unwrap()
}

/// Independent oracle: is there a kind- and content-preserving bijection
/// between the bundles under which every reference edge corresponds?
/// Content ignores ids and reference targets. Plain backtracking, meant
/// for per-patient graphs.
pub fn reference_isomorphic(a: &fhirsynth::fhir::Bundle, b: &fhirsynth::fhir::Bundle) -> bool {
    use fhirsynth::fhir::{to_value, FhirResource};
    use serde_json::Value;

    fn blank_refs(v: &mut Value) {
        match v {
            Value::Object(m) if m.contains_key("reference") => *v = Value::Null,
            Value::Object(m) => m.values_mut().for_each(blank_refs),
            _ => {}
        }
    }
    fn content(r: &FhirResource) -> String {
        let mut v = to_value(r);
        v.as_object_mut().unwrap().remove("id");
        blank_refs(&mut v);
        v.to_string()
    }
    fn edges(r: &FhirResource) -> Vec<(String, String)> {
        r.references()
            .into_iter()
            .map(|(f, t)| (f.to_string(), t.to_string()))
            .collect()
    }
    let (ra, rb) = (&a.resources, &b.resources);
    if ra.len() != rb.len() {
        return false;
    }
    let ca: Vec<String> = ra.iter().map(content).collect();
    let cb: Vec<String> = rb.iter().map(content).collect();
    let ids_a: Vec<String> = ra.iter().map(|r| r.id().to_string()).collect();
    let ids_b: Vec<String> = rb.iter().map(|r| r.id().to_string()).collect();

    fn consistent(ra: &[FhirResource], rb: &[FhirResource], ids_a: &[String], ids_b: &[String], m: &[usize]) -> bool {
        let map: std::collections::HashMap<&str, &str> = m
            .iter()
            .enumerate()
            .map(|(i, &j)| (ids_a[i].as_str(), ids_b[j].as_str()))
            .collect();
        ra.iter().enumerate().all(|(i, r)| {
            let ea = edges(r);
            let eb = edges(&rb[m[i]]);
            ea.len() == eb.len()
                && ea
                    .iter()
                    .zip(&eb)
                    .all(|((fa, ta), (fb, tb))| fa == fb && map.get(ta.as_str()).map_or(ta == tb, |t| t == tb))
        })
    }
    /// Resources, contents and ids of both graphs.
    type Sides<'a> = (
        &'a [FhirResource],
        &'a [FhirResource],
        &'a [String],
        &'a [String],
        &'a [String],
        &'a [String],
    );
    fn search(i: usize, m: &mut Vec<usize>, used: &mut Vec<bool>, ctx: Sides) -> bool {
        let (ra, rb, ca, cb, ids_a, ids_b) = ctx;
        if i == ra.len() {
            return consistent(ra, rb, ids_a, ids_b, m);
        }
        for j in 0..rb.len() {
            if used[j] || ra[i].kind() != rb[j].kind() || ca[i] != cb[j] {
                continue;
            }
            used[j] = true;
            m.push(j);
            if search(i + 1, m, used, ctx) {
                return true;
            }
            m.pop();
            used[j] = false;
        }
        false
    }
    search(
        0,
        &mut Vec::new(),
        &mut vec![false; rb.len()],
        (ra, rb, &ca, &cb, &ids_a, &ids_b),
    )
}
