//! Decision-support service: assembles one patient's model features from
//! one or more FHIR servers, scores them with a risk model and serves the
//! result over HTTP.

mod routes;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;
use tokio::task::{JoinHandle, JoinSet};

pub use routes::cdss_router;

use crate::adapter::{AdapterError, FhirClient, ServerCredentials};
use crate::fhir::{natural_id_key, FhirResource, FieldValue, ResourceId, ResourceKind};
use crate::risk::{FeatureRecord, RiskError, RiskModel, ATC_FEATURE};
use crate::server::{sha256, to_hex};
use crate::wrangling::{columns_for_resource, MappingIndex};

/// Feature fed by `override.category`.
pub const CATEGORY_FEATURE: &str = "prescriptionCategory";
/// Provenance label of an overridden feature.
pub const USER_OVERRIDE: &str = "user-override";

/// Settings for the browser launch: the server the UI signs in to and the
/// client whose secret stays on this side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaunchConfig {
    pub server: String,
    pub client_id: String,
    pub client_secret: String,
    pub redirect_uri: String,
}

/// Federation config file (TOML).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub model: PathBuf,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default)]
    pub port: u16,
    #[serde(default = "default_origins")]
    pub cors_origins: Vec<String>,
    /// Static UI bundle served under `/`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
    pub servers: BTreeMap<String, ServerCredentials>,
    /// Which server provides each resource kind.
    pub assign: BTreeMap<ResourceKind, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub launch: Option<LaunchConfig>,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_origins() -> Vec<String> {
    vec!["http://localhost:4200".into()]
}

/// Kinds whose fields feed the model, in the order they are resolved.
pub const FEATURE_KINDS: [ResourceKind; 5] = [
    ResourceKind::Patient,
    ResourceKind::Encounter,
    ResourceKind::Condition,
    ResourceKind::MedicationRequest,
    ResourceKind::Medication,
];

impl FederationConfig {
    /// Every server of a single-server setup.
    pub fn single(server: &str, creds: ServerCredentials, model: impl Into<PathBuf>) -> FederationConfig {
        FederationConfig {
            model: model.into(),
            bind: default_bind(),
            port: 0,
            cors_origins: default_origins(),
            ui_dir: None,
            servers: [(server.to_string(), creds)].into(),
            assign: FEATURE_KINDS.iter().map(|k| (*k, server.to_string())).collect(),
            launch: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<FederationConfig, CdssError> {
        let cfg: FederationConfig = toml::from_str(text).map_err(|e| CdssError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Loads a config; relative model and UI paths are taken relative to
    /// the config file.
    pub fn load(path: impl AsRef<Path>) -> Result<FederationConfig, CdssError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CdssError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = FederationConfig::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.model.is_relative() {
                cfg.model = dir.join(&cfg.model);
            }
            if let Some(ui) = cfg.ui_dir.as_mut().filter(|u| u.is_relative()) {
                *ui = dir.join(&*ui);
            }
        }
        Ok(cfg)
    }

    /// Every feature kind assigned to a configured server; Medication on
    /// the MedicationRequest server since it is reached by reference.
    pub fn validate(&self) -> Result<(), CdssError> {
        for kind in FEATURE_KINDS {
            let server = self
                .assign
                .get(&kind)
                .ok_or_else(|| CdssError::Config(format!("no server assigned to {kind}")))?;
            if !self.servers.contains_key(server) {
                return Err(CdssError::Config(format!(
                    "{kind} is assigned to unknown server `{server}`"
                )));
            }
        }
        if let Some(extra) = self.assign.keys().find(|k| !FEATURE_KINDS.contains(k)) {
            return Err(CdssError::Config(format!(
                "{extra} feeds no feature and cannot be assigned"
            )));
        }
        if self.assign[&ResourceKind::Medication] != self.assign[&ResourceKind::MedicationRequest] {
            return Err(CdssError::Config(
                "Medication must come from the MedicationRequest server".into(),
            ));
        }
        if let Some(l) = &self.launch {
            if !self.servers.contains_key(&l.server) {
                return Err(CdssError::Config(format!(
                    "launch server `{}` is not configured",
                    l.server
                )));
            }
        }
        Ok(())
    }

    pub fn addr(&self) -> Result<SocketAddr, CdssError> {
        format!("{}:{}", self.bind, self.port)
            .parse()
            .map_err(|e| CdssError::Config(format!("bind address: {e}")))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CdssError {
    #[error("config: {0}")]
    Config(String),
    #[error("patient `{0}` not found")]
    UnknownPatient(String),
    #[error("patient `{patient}` has no Encounter on server `{server}`")]
    NoEncounter { patient: String, server: String },
    #[error("upstream server `{server}` failed: {message}")]
    Upstream { server: String, message: String },
    #[error("invalid override: {0}")]
    BadOverride(String),
    #[error("no risk model loaded")]
    ModelUnavailable,
    #[error(transparent)]
    Risk(#[from] RiskError),
}

impl CdssError {
    fn upstream(e: AdapterError, fallback: &str) -> CdssError {
        CdssError::Upstream {
            server: e.server().unwrap_or(fallback).to_string(),
            message: e.to_string(),
        }
    }
}

/// What-if values replacing fetched ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overrides {
    pub atc: Option<String>,
    pub category: Option<String>,
}

impl Overrides {
    /// ATC codes: a letter, two digits, then optionally a letter, a letter
    /// and two digits, in that order (`C09`, `C09A`, `C09AA05`).
    pub fn validate(&self) -> Result<(), CdssError> {
        if let Some(atc) = &self.atc {
            let c: Vec<char> = atc.chars().collect();
            let shape_ok = matches!(c.len(), 3 | 4 | 5 | 7)
                && c[0].is_ascii_uppercase()
                && c[1].is_ascii_digit()
                && c[2].is_ascii_digit()
                && c.get(3).is_none_or(|x| x.is_ascii_uppercase())
                && c.get(4).is_none_or(|x| x.is_ascii_uppercase())
                && c[5.min(c.len())..].iter().all(char::is_ascii_digit);
            if !shape_ok {
                return Err(CdssError::BadOverride(format!("`{atc}` is not an ATC code")));
            }
        }
        if let Some(cat) = &self.category {
            let ok = !cat.trim().is_empty()
                && cat.len() <= 64
                && cat
                    .chars()
                    .all(|ch| ch.is_alphanumeric() || matches!(ch, ' ' | '-' | '_'));
            if !ok {
                return Err(CdssError::BadOverride(format!(
                    "`{cat}` is not a prescription category"
                )));
            }
        }
        Ok(())
    }
}

/// The model inputs for one patient and where each came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AssembledFeatures {
    pub patient_id: String,
    pub encounter_id: String,
    pub features: BTreeMap<String, String>,
    /// Feature name to server name or `user-override`.
    pub provenance: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PredictionResponse {
    pub patient_id: String,
    pub encounter_id: String,
    pub features: BTreeMap<String, String>,
    pub provenance: BTreeMap<String, String>,
    pub probability: f64,
    pub class: u8,
    pub threshold: f64,
    pub algorithm: String,
    pub model_version: String,
    pub warnings: Vec<String>,
}

/// The newest Encounter: latest `period.start`, undated ones oldest, ties
/// to the lowest id.
pub fn most_recent_encounter(encounters: &[FhirResource]) -> Option<&FhirResource> {
    encounters.iter().min_by(|a, b| {
        let start = |r: &FhirResource| match r.get("period.start") {
            Some(FieldValue::Date(d)) => Some(d),
            _ => None,
        };
        start(b)
            .cmp(&start(a))
            .then_with(|| natural_id_key(a.id_value()).cmp(&natural_id_key(b.id_value())))
    })
}

/// What one server contributed for a patient.
#[derive(Default)]
struct Fetched {
    resources: BTreeMap<ResourceKind, FhirResource>,
    warnings: Vec<String>,
}

async fn fetch_from(
    client: Arc<FhirClient>,
    kinds: BTreeSet<ResourceKind>,
    patient: String,
) -> Result<Fetched, CdssError> {
    let name = client.name().to_string();
    let up = |e: AdapterError| CdssError::upstream(e, &name);
    let mut out = Fetched::default();
    if kinds.contains(&ResourceKind::Patient) {
        let id =
            ResourceId::new(ResourceKind::Patient, &patient).map_err(|_| CdssError::UnknownPatient(patient.clone()))?;
        match client.read(&id).await {
            Ok(p) => {
                out.resources.insert(ResourceKind::Patient, p);
            }
            Err(e) if e.is_not_found() => return Err(CdssError::UnknownPatient(patient)),
            Err(e) => return Err(up(e)),
        }
    }
    // The encounter that scopes Conditions and MedicationRequests here.
    let needs_anchor = kinds.contains(&ResourceKind::Encounter)
        || kinds.contains(&ResourceKind::Condition)
        || kinds.contains(&ResourceKind::MedicationRequest);
    let mut anchor = None;
    if needs_anchor {
        match client.search(ResourceKind::Encounter, Some(&patient), None, None).await {
            Ok(found) => anchor = most_recent_encounter(&found).cloned(),
            Err(e) if e.is_not_found() && !kinds.contains(&ResourceKind::Encounter) => {}
            Err(e) => return Err(up(e)),
        }
        if kinds.contains(&ResourceKind::Encounter) {
            let enc = anchor.clone().ok_or_else(|| CdssError::NoEncounter {
                patient: patient.clone(),
                server: name.clone(),
            })?;
            out.resources.insert(ResourceKind::Encounter, enc);
        }
    }
    let anchor_id = anchor.as_ref().map(|a| a.id_value().to_string());
    for kind in [ResourceKind::Condition, ResourceKind::MedicationRequest] {
        if !kinds.contains(&kind) {
            continue;
        }
        let found = client
            .search(kind, Some(&patient), anchor_id.as_deref(), Some(1))
            .await
            .map_err(&up)?;
        match found.into_iter().next() {
            Some(r) => {
                out.resources.insert(kind, r);
            }
            None => out
                .warnings
                .push(format!("no {kind} for patient `{patient}` on server `{name}`")),
        }
    }
    if kinds.contains(&ResourceKind::Medication) {
        let med_ref = match out
            .resources
            .get(&ResourceKind::MedicationRequest)
            .and_then(|r| r.get("medication"))
        {
            Some(FieldValue::Ref(id)) => Some(id),
            _ => None,
        };
        if let Some(id) = med_ref {
            match client.read(&id).await {
                Ok(m) => {
                    out.resources.insert(ResourceKind::Medication, m);
                }
                Err(e) if e.is_not_found() => out.warnings.push(format!("{id} is missing on server `{name}`")),
                Err(e) => return Err(up(e)),
            }
        }
    }
    Ok(out)
}

/// Shared, immutable service state.
pub struct CdssService {
    config: FederationConfig,
    clients: BTreeMap<String, Arc<FhirClient>>,
    model: Option<Arc<RiskModel>>,
    model_version: String,
    index: MappingIndex,
}

impl CdssService {
    /// Builds clients for every server and loads the model. A missing or
    /// broken model leaves the service up but unable to predict.
    pub fn new(config: FederationConfig) -> Result<CdssService, CdssError> {
        let model = match RiskModel::load(&config.model) {
            Ok(m) => Some(m),
            Err(e) => {
                tracing::error!(model = %config.model.display(), "risk model not loaded: {e}");
                None
            }
        };
        CdssService::with_model(config, model)
    }

    pub fn with_model(config: FederationConfig, model: Option<RiskModel>) -> Result<CdssService, CdssError> {
        config.validate()?;
        let clients = config
            .servers
            .iter()
            .map(|(name, creds)| {
                FhirClient::new(name.clone(), creds.clone())
                    .map(|c| (name.clone(), Arc::new(c)))
                    .map_err(|e| CdssError::Config(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        let model_version = model
            .as_ref()
            .map(|m| to_hex(&sha256(m.to_json().as_bytes()))[..16].to_string())
            .unwrap_or_default();
        Ok(CdssService {
            config,
            clients,
            model: model.map(Arc::new),
            model_version,
            index: MappingIndex::npr_norpd(),
        })
    }

    pub fn config(&self) -> &FederationConfig {
        &self.config
    }

    pub fn model(&self) -> Option<&RiskModel> {
        self.model.as_deref()
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn client(&self, server: &str) -> Option<&Arc<FhirClient>> {
        self.clients.get(server)
    }

    pub fn clients(&self) -> impl Iterator<Item = (&String, &Arc<FhirClient>)> {
        self.clients.iter()
    }

    /// Fetches from every assigned server at once and reads each model
    /// feature off the resource kind its column maps to.
    pub async fn assemble_features(&self, patient: &str) -> Result<AssembledFeatures, CdssError> {
        let model = self.model.as_ref().ok_or(CdssError::ModelUnavailable)?;
        let mut per_server: BTreeMap<&String, BTreeSet<ResourceKind>> = BTreeMap::new();
        for (kind, server) in &self.config.assign {
            per_server.entry(server).or_default().insert(*kind);
        }
        let mut tasks = JoinSet::new();
        for (server, kinds) in per_server {
            let client = self.clients[server].clone();
            let patient = patient.to_string();
            let server = server.clone();
            tasks.spawn(async move { (server, fetch_from(client, kinds, patient).await) });
        }
        let mut results = BTreeMap::new();
        while let Some(joined) = tasks.join_next().await {
            let (server, r) = joined.map_err(|e| CdssError::Config(format!("fetch task failed: {e}")))?;
            results.insert(server, r);
        }
        // The Patient server decides "unknown patient"; after that, errors
        // are reported in server name order.
        let patient_server = &self.config.assign[&ResourceKind::Patient];
        if let Some(Err(CdssError::UnknownPatient(p))) = results.get(patient_server) {
            return Err(CdssError::UnknownPatient(p.clone()));
        }
        let mut resources: BTreeMap<ResourceKind, (FhirResource, String)> = BTreeMap::new();
        let mut warnings = Vec::new();
        for (server, r) in results {
            let fetched = r?;
            warnings.extend(fetched.warnings);
            for (kind, res) in fetched.resources {
                resources.insert(kind, (res, server.clone()));
            }
        }

        let mut features = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        for f in &model.spec.features {
            let (kind, _) = self
                .index
                .binding_for_column(&f.column)
                .ok_or_else(|| CdssError::Config(format!("column `{}` maps to no resource field", f.column)))?;
            let server = &self.config.assign[&kind];
            let value = match resources.get(&kind) {
                Some((r, _)) => columns_for_resource(&self.index, r)
                    .map_err(|e| CdssError::Config(e.to_string()))?
                    .into_iter()
                    .find(|(c, _)| *c == f.column)
                    .map(|(_, v)| v)
                    .unwrap_or_default(),
                None => String::new(),
            };
            if value.is_empty() {
                warnings.push(format!(
                    "{}: no value on server `{server}`, the training mode is used",
                    f.name
                ));
            }
            features.insert(f.name.clone(), value);
            provenance.insert(f.name.clone(), server.clone());
        }
        let encounter_id = resources
            .get(&ResourceKind::Encounter)
            .map(|(r, _)| r.id_value().to_string())
            .unwrap_or_default();
        Ok(AssembledFeatures {
            patient_id: patient.to_string(),
            encounter_id,
            features,
            provenance,
            warnings,
        })
    }

    pub async fn predict(&self, patient: &str, overrides: &Overrides) -> Result<PredictionResponse, CdssError> {
        overrides.validate()?;
        let model = self.model.as_ref().ok_or(CdssError::ModelUnavailable)?;
        let mut a = self.assemble_features(patient).await?;
        for (name, value) in [(ATC_FEATURE, &overrides.atc), (CATEGORY_FEATURE, &overrides.category)] {
            if let Some(v) = value {
                a.features.insert(name.to_string(), v.clone());
                a.provenance.insert(name.to_string(), USER_OVERRIDE.to_string());
            }
        }
        let record: FeatureRecord = a.features.clone();
        let p = model.predict(&record)?;
        a.warnings.extend(p.warnings);
        Ok(PredictionResponse {
            patient_id: a.patient_id,
            encounter_id: a.encounter_id,
            features: a.features,
            provenance: a.provenance,
            probability: p.probability,
            class: p.class,
            threshold: model.threshold,
            algorithm: model.algorithm.as_str().to_string(),
            model_version: self.model_version.clone(),
            warnings: a.warnings,
        })
    }
}

/// A running service, stopped by [`RunningCdss::shutdown`] or on drop.
pub struct RunningCdss {
    pub addr: SocketAddr,
    pub service: Arc<CdssService>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl RunningCdss {
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

pub async fn spawn_cdss(service: CdssService, addr: SocketAddr) -> io::Result<RunningCdss> {
    let service = Arc::new(service);
    let app = cdss_router(service.clone()).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let (addr, stop, task) = crate::server::serve_router(app, addr).await?;
    tracing::info!(%addr, "cdss service listening");
    Ok(RunningCdss {
        addr,
        service,
        stop: Some(stop),
        task,
    })
}

#[cfg(test)]
mod tests;
