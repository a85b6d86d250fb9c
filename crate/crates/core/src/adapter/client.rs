use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use reqwest::{RequestBuilder, Response, StatusCode};
use serde::Deserialize;
use tokio::sync::Mutex;

use super::graph::{group_by_encounter, sort_resources};
use super::{AdapterError, IdMap, ServerCredentials};
use crate::fhir::{
    parse_resource, serialize_resource, validate_bundle, Bundle, FhirResource, ParseMode, ResourceId, ResourceKind,
};

/// Transport failures are retried `retries` times, waiting
/// `base_delay * 2^k` before retry `k`. Creates are only retried when the
/// connection was never established, so a retry cannot duplicate one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 3,
            base_delay: Duration::from_millis(100),
        }
    }
}

/// A cached token is replaced once it has less than this left.
const REFRESH_MARGIN: Duration = Duration::from_secs(60);

struct CachedToken {
    token: String,
    expires_at: Instant,
}

#[derive(Deserialize)]
struct TokenReply {
    access_token: String,
    expires_in: u64,
}

/// One server's client. Methods take `&self`; the token cache is guarded.
pub struct FhirClient {
    name: String,
    creds: ServerCredentials,
    base: String,
    http: reqwest::Client,
    retry: RetryPolicy,
    token: Mutex<Option<CachedToken>>,
}

impl FhirClient {
    /// `name` labels the server in errors and logs.
    pub fn new(name: impl Into<String>, creds: ServerCredentials) -> Result<FhirClient, AdapterError> {
        let url = reqwest::Url::parse(&creds.base_url).map_err(|_| AdapterError::BadUrl(creds.base_url.clone()))?;
        if !matches!(url.scheme(), "http" | "https") || url.host().is_none() {
            return Err(AdapterError::BadUrl(creds.base_url.clone()));
        }
        let http = reqwest::Client::builder()
            .no_proxy()
            .connect_timeout(Duration::from_secs(5))
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| AdapterError::BadUrl(e.to_string()))?;
        Ok(FhirClient {
            name: name.into(),
            base: creds.base_url.trim_end_matches('/').to_string(),
            creds,
            http,
            retry: RetryPolicy::default(),
            token: Mutex::new(None),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> FhirClient {
        self.retry = retry;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send(&self, idempotent: bool, build: impl Fn() -> RequestBuilder) -> Result<Response, AdapterError> {
        let mut attempt = 0;
        loop {
            match build().send().await {
                Ok(resp) => return Ok(resp),
                Err(e) => {
                    let retryable = idempotent || e.is_connect();
                    if !retryable || attempt >= self.retry.retries {
                        return Err(AdapterError::Network {
                            server: self.name.clone(),
                            attempts: attempt + 1,
                            message: e.without_url().to_string(),
                        });
                    }
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    tracing::debug!(server = %self.name, attempt, ?delay, "retrying after transport error");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
            }
        }
    }

    /// Returns a token valid for at least another minute, fetching one if
    /// needed. A rejection by the server is final.
    pub async fn authenticate(&self) -> Result<String, AdapterError> {
        let mut cached = self.token.lock().await;
        if let Some(t) = cached.as_ref() {
            if t.expires_at.saturating_duration_since(Instant::now()) >= REFRESH_MARGIN {
                return Ok(t.token.clone());
            }
        }
        let url = self.creds.token_url();
        let form = [
            ("grant_type", "client_credentials"),
            ("client_id", self.creds.client_id.as_str()),
            ("client_secret", self.creds.client_secret.as_str()),
        ];
        let resp = self.send(true, || self.http.post(&url).form(&form)).await?;
        let status = resp.status();
        let text = resp.text().await.unwrap_or_default();
        if !status.is_success() {
            return Err(AdapterError::Auth {
                server: self.name.clone(),
                message: format!("{status}: {}", error_message(&text)),
            });
        }
        let reply: TokenReply = serde_json::from_str(&text).map_err(|e| AdapterError::Auth {
            server: self.name.clone(),
            message: format!("unreadable token reply: {e}"),
        })?;
        let token = reply.access_token.clone();
        *cached = Some(CachedToken {
            token: reply.access_token,
            expires_at: Instant::now() + Duration::from_secs(reply.expires_in),
        });
        Ok(token)
    }

    pub async fn invalidate_token(&self) {
        *self.token.lock().await = None;
    }

    /// Sends with the bearer token. A 401 drops the cached token and tries
    /// once more with a fresh one, covering server restarts.
    async fn authed(&self, idempotent: bool, build: impl Fn(&str) -> RequestBuilder) -> Result<Response, AdapterError> {
        let token = self.authenticate().await?;
        let resp = self.send(idempotent, || build(&token)).await?;
        if resp.status() != StatusCode::UNAUTHORIZED {
            return Ok(resp);
        }
        self.invalidate_token().await;
        let token = self.authenticate().await?;
        self.send(idempotent, || build(&token)).await
    }

    async fn body(&self, resp: Response, what: &str) -> Result<String, AdapterError> {
        let status = resp.status();
        let text = resp.text().await.map_err(|e| AdapterError::Network {
            server: self.name.clone(),
            attempts: 1,
            message: e.without_url().to_string(),
        })?;
        match status {
            s if s.is_success() => Ok(text),
            StatusCode::NOT_FOUND => Err(AdapterError::NotFound {
                server: self.name.clone(),
                what: what.to_string(),
            }),
            StatusCode::UNAUTHORIZED => Err(AdapterError::Auth {
                server: self.name.clone(),
                message: error_message(&text),
            }),
            s => Err(AdapterError::Http {
                server: self.name.clone(),
                status: s.as_u16(),
                request: what.to_string(),
                message: error_message(&text),
            }),
        }
    }

    fn parse(&self, text: &str, what: &str) -> Result<FhirResource, AdapterError> {
        parse_resource(text, ParseMode::Strict).map_err(|source| AdapterError::BadResponse {
            server: self.name.clone(),
            what: what.to_string(),
            source,
        })
    }

    /// Posts a resource; returns it as stored, with the server's id.
    pub async fn create(&self, r: &FhirResource) -> Result<FhirResource, AdapterError> {
        let url = format!("{}/{}", self.base, r.kind());
        let body = serialize_resource(r);
        let what = format!("POST /{}", r.kind());
        let resp = self
            .authed(false, |t| {
                self.http
                    .post(&url)
                    .bearer_auth(t)
                    .header(reqwest::header::CONTENT_TYPE, "application/fhir+json")
                    .body(body.clone())
            })
            .await?;
        let text = self.body(resp, &what).await?;
        self.parse(&text, &what)
    }

    pub async fn read(&self, id: &ResourceId) -> Result<FhirResource, AdapterError> {
        let url = format!("{}/{}/{}", self.base, id.kind(), id.value());
        let resp = self.authed(true, |t| self.http.get(&url).bearer_auth(t)).await?;
        let what = id.to_string();
        let text = self.body(resp, &what).await?;
        self.parse(&text, &what)
    }

    /// Resources of `kind` matching the filters, in server id order. A
    /// kind the server does not provide is `NotFound`.
    pub async fn search(
        &self,
        kind: ResourceKind,
        patient: Option<&str>,
        encounter: Option<&str>,
        count: Option<usize>,
    ) -> Result<Vec<FhirResource>, AdapterError> {
        let url = format!("{}/{kind}", self.base);
        let mut query: Vec<(&str, String)> = Vec::new();
        if let Some(p) = patient {
            query.push(("patient", p.to_string()));
        }
        if let Some(e) = encounter {
            query.push(("encounter", e.to_string()));
        }
        if let Some(c) = count {
            query.push(("_count", c.to_string()));
        }
        let resp = self
            .authed(true, |t| self.http.get(&url).bearer_auth(t).query(&query))
            .await?;
        let what = format!("search {kind}");
        let text = self.body(resp, &what).await?;
        let bundle = Bundle::from_json(&text, ParseMode::Strict).map_err(|source| AdapterError::BadResponse {
            server: self.name.clone(),
            what,
            source,
        })?;
        Ok(bundle.resources)
    }

    /// Uploads one bundle, skipping `exclude`d kinds. Resources go out in
    /// kind order with references rewritten to the ids the server assigned.
    /// Nothing is sent unless the bundle validates and the order holds.
    pub async fn upload_bundle(&self, b: &Bundle, exclude: &BTreeSet<ResourceKind>) -> Result<IdMap, AdapterError> {
        let plan = plan_upload(b, exclude)?;
        let mut map = IdMap::new();
        self.run_plan(b, &plan, &mut map).await?;
        Ok(map)
    }

    /// Uploads many bundles after validating all of them. On failure the
    /// error carries every id created so far, across bundles.
    pub async fn upload_bundles(&self, bs: &[Bundle], exclude: &BTreeSet<ResourceKind>) -> Result<IdMap, AdapterError> {
        let plans: Vec<Vec<&FhirResource>> = bs.iter().map(|b| plan_upload(b, exclude)).collect::<Result<_, _>>()?;
        let mut map = IdMap::new();
        for (b, plan) in bs.iter().zip(&plans) {
            self.run_plan(b, plan, &mut map).await?;
        }
        Ok(map)
    }

    async fn run_plan(&self, b: &Bundle, plan: &[&FhirResource], map: &mut IdMap) -> Result<(), AdapterError> {
        for r in plan {
            let mut out = (*r).clone();
            for (_, target) in out.references_mut() {
                if let Some(s) = map.get(target) {
                    *target = s.clone();
                } else if !b.external.contains(target) {
                    return Err(AdapterError::OrderViolation {
                        from: r.id(),
                        target: target.clone(),
                    });
                }
            }
            match self.create(&out).await {
                Ok(stored) => map.insert(r.id(), stored.id()),
                Err(cause) => {
                    return Err(AdapterError::PartialUpload {
                        uploaded: std::mem::take(map),
                        failed: r.id(),
                        cause: Box::new(cause),
                    })
                }
            }
        }
        Ok(())
    }

    /// The Patient, every Encounter, Condition, MedicationRequest and
    /// MedicationDispense naming it, and everything those reference, in
    /// kind then id order. Kinds the server does not provide are skipped.
    pub async fn download_patient_graph(&self, patient_id: &str) -> Result<Bundle, AdapterError> {
        let pid = ResourceId::new(ResourceKind::Patient, patient_id).map_err(|_| AdapterError::NotFound {
            server: self.name.clone(),
            what: format!("Patient/{patient_id}"),
        })?;
        let mut members = vec![self.read(&pid).await?];
        for kind in [
            ResourceKind::Encounter,
            ResourceKind::Condition,
            ResourceKind::MedicationRequest,
            ResourceKind::MedicationDispense,
        ] {
            match self.search(kind, Some(patient_id), None, None).await {
                Ok(found) => members.extend(found),
                Err(e) if e.is_not_found() => {}
                Err(e) => {
                    return Err(AdapterError::Fetch {
                        kind,
                        cause: Box::new(e),
                    })
                }
            }
        }
        let mut seen: BTreeSet<ResourceId> = members.iter().map(FhirResource::id).collect();
        let mut i = 0;
        while i < members.len() {
            let targets: Vec<ResourceId> = members[i]
                .references()
                .into_iter()
                .map(|(_, t)| t.clone())
                .filter(|t| !seen.contains(t))
                .collect();
            for target in targets {
                if !seen.insert(target.clone()) {
                    continue;
                }
                match self.read(&target).await {
                    Ok(r) => members.push(r),
                    Err(e) if e.is_not_found() => {
                        return Err(AdapterError::DanglingOnServer {
                            server: self.name.clone(),
                            from: members[i].id(),
                            target,
                        })
                    }
                    Err(e) => {
                        return Err(AdapterError::Fetch {
                            kind: target.kind(),
                            cause: Box::new(e),
                        })
                    }
                }
            }
            i += 1;
        }
        sort_resources(&mut members);
        Ok(Bundle::new(members))
    }

    /// Every admission on the server as its own bundle, in Encounter id
    /// order.
    pub async fn download_all(&self) -> Result<Vec<Bundle>, AdapterError> {
        let mut all = Vec::new();
        for kind in ResourceKind::ALL {
            match self.search(kind, None, None, None).await {
                Ok(found) => all.extend(found),
                Err(e) if e.is_not_found() => {}
                Err(e) => {
                    return Err(AdapterError::Fetch {
                        kind,
                        cause: Box::new(e),
                    })
                }
            }
        }
        group_by_encounter(all).map_err(|(from, target)| AdapterError::DanglingOnServer {
            server: self.name.clone(),
            from,
            target,
        })
    }
}

/// Upload order for a bundle: validated, excluded kinds dropped, stable
/// by kind. Every in-bundle reference must point at an earlier kind; this
/// also rules out cycles.
pub(super) fn plan_upload<'a>(
    b: &'a Bundle,
    exclude: &BTreeSet<ResourceKind>,
) -> Result<Vec<&'a FhirResource>, AdapterError> {
    let report = validate_bundle(b);
    if !report.is_empty() {
        return Err(AdapterError::InvalidBundle(report));
    }
    let mut plan: Vec<&FhirResource> = b.resources.iter().filter(|r| !exclude.contains(&r.kind())).collect();
    plan.sort_by_key(|r| r.kind().index());
    for r in &plan {
        for (_, target) in r.references() {
            if b.external.contains(target) {
                continue;
            }
            if exclude.contains(&target.kind()) {
                return Err(AdapterError::ExcludedTarget {
                    from: r.id(),
                    target: target.clone(),
                });
            }
            if target.kind().index() >= r.kind().index() {
                return Err(AdapterError::OrderViolation {
                    from: r.id(),
                    target: target.clone(),
                });
            }
        }
    }
    Ok(plan)
}

/// The human part of an error body: OAuth `error_description`, FHIR
/// OperationOutcome diagnostics, or the raw text.
fn error_message(text: &str) -> String {
    let v: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(_) => return text.chars().take(200).collect(),
    };
    v.get("error_description")
        .or_else(|| v.pointer("/issue/0/diagnostics"))
        .and_then(|d| d.as_str())
        .map(String::from)
        .unwrap_or_else(|| text.chars().take(200).collect())
}
