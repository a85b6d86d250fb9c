use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use super::{CdssError, CdssService, Overrides};
use crate::adapter::{AdapterError, FhirClient, RetryPolicy};

#[derive(Clone)]
struct AppState {
    service: Arc<CdssService>,
    http: reqwest::Client,
}

/// Routes of the service, with CORS for the configured UI origins and the
/// UI bundle as fallback when one is configured.
pub fn cdss_router(service: Arc<CdssService>) -> Result<Router, CdssError> {
    let origins = service
        .config()
        .cors_origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| CdssError::Config(format!("bad CORS origin `{o}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    let cors = CorsLayer::new()
        .allow_origin(origins)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE]);
    let http = reqwest::Client::builder()
        .no_proxy()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| CdssError::Config(e.to_string()))?;
    let ui_dir = service.config().ui_dir.clone();
    let mut app = Router::new()
        .route("/predict", get(predict))
        .route("/healthz", get(healthz))
        .route("/bootstrap", get(bootstrap))
        .route("/launch/exchange", post(launch_exchange))
        .route("/patients", get(patients))
        .with_state(AppState { service, http });
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    Ok(app.layer(cors))
}

fn error(status: StatusCode, code: &str, message: String, server: Option<&str>) -> Response {
    let mut body = json!({"error": code, "message": message});
    if let Some(s) = server {
        body["server"] = json!(s);
    }
    (status, Json(body)).into_response()
}

impl IntoResponse for CdssError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        match &self {
            CdssError::UnknownPatient(_) => error(StatusCode::NOT_FOUND, "unknown-patient", message, None),
            CdssError::NoEncounter { server, .. } => {
                error(StatusCode::UNPROCESSABLE_ENTITY, "no-encounter", message, Some(server))
            }
            CdssError::Upstream { server, .. } => error(StatusCode::BAD_GATEWAY, "upstream", message, Some(server)),
            CdssError::BadOverride(_) => error(StatusCode::BAD_REQUEST, "bad-request", message, None),
            CdssError::ModelUnavailable => error(StatusCode::SERVICE_UNAVAILABLE, "no-model", message, None),
            CdssError::Config(_) | CdssError::Risk(_) => {
                error(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
            }
        }
    }
}

async fn predict(State(st): State<AppState>, Query(params): Query<Vec<(String, String)>>) -> Response {
    let mut patient = None;
    let mut overrides = Overrides::default();
    for (k, v) in params {
        let slot = match k.as_str() {
            "patient" => &mut patient,
            "override.atc" => &mut overrides.atc,
            "override.category" => &mut overrides.category,
            _ => return CdssError::BadOverride(format!("unknown parameter `{k}`")).into_response(),
        };
        if slot.replace(v).is_some() {
            return CdssError::BadOverride(format!("parameter `{k}` given twice")).into_response();
        }
    }
    let Some(patient) = patient.filter(|p| !p.is_empty()) else {
        return error(
            StatusCode::BAD_REQUEST,
            "bad-request",
            "`patient` is required".into(),
            None,
        );
    };
    match st.service.predict(&patient, &overrides).await {
        Ok(p) => {
            let sources: Vec<String> = p.provenance.iter().map(|(f, s)| format!("{f}={s}")).collect();
            tracing::info!(
                patient = %p.patient_id,
                encounter = %p.encounter_id,
                probability = p.probability,
                class = p.class,
                sources = %sources.join(","),
                "prediction"
            );
            Json(p).into_response()
        }
        Err(e) => {
            tracing::warn!(patient = %patient, "prediction failed: {e}");
            e.into_response()
        }
    }
}

/// Each upstream is probed with a fresh token request, so a cached token
/// cannot hide a server that went away.
async fn healthz(State(st): State<AppState>) -> Response {
    let mut upstreams = serde_json::Map::new();
    let mut degraded = false;
    for (name, creds) in &st.service.config().servers {
        let state = match FhirClient::new(name.clone(), creds.clone()) {
            Ok(c) => {
                let probe = c.with_retry(RetryPolicy {
                    retries: 0,
                    base_delay: Duration::ZERO,
                });
                match probe.authenticate().await {
                    Ok(_) => "ok",
                    Err(AdapterError::Auth { .. }) => "auth-failed",
                    Err(_) => "unreachable",
                }
            }
            Err(_) => "unreachable",
        };
        degraded |= state != "ok";
        upstreams.insert(name.clone(), json!(state));
    }
    let model = st.service.model().is_some();
    let status = if !model {
        "no-model"
    } else if degraded {
        "degraded"
    } else {
        "ok"
    };
    let body = json!({
        "status": status,
        "model": model,
        "modelVersion": st.service.model_version(),
        "upstreams": upstreams,
    });
    let code = if model {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (code, Json(body)).into_response()
}

/// What the browser needs to start a launch; the client secret stays here.
async fn bootstrap(State(st): State<AppState>) -> Response {
    let cfg = st.service.config();
    let Some(launch) = &cfg.launch else {
        return error(
            StatusCode::NOT_FOUND,
            "no-launch",
            "no launch server is configured".into(),
            None,
        );
    };
    let base = cfg.servers[&launch.server].base_url.trim_end_matches('/').to_string();
    Json(json!({
        "launchServer": launch.server,
        "fhirBaseUrl": base,
        "authorizeUrl": format!("{base}/authorize"),
        "clientId": launch.client_id,
        "redirectUri": launch.redirect_uri,
        "exchangeUrl": "/launch/exchange",
        "patientsUrl": "/patients",
        "predictUrl": "/predict",
        "overridable": ["atc", "category"],
    }))
    .into_response()
}

#[derive(Deserialize)]
struct ExchangeRequest {
    code: String,
}

/// Trades an authorization code for a token on the launch server, adding
/// the client secret on the way.
async fn launch_exchange(State(st): State<AppState>, Json(req): Json<ExchangeRequest>) -> Response {
    let cfg = st.service.config();
    let Some(launch) = &cfg.launch else {
        return error(
            StatusCode::NOT_FOUND,
            "no-launch",
            "no launch server is configured".into(),
            None,
        );
    };
    let base = cfg.servers[&launch.server].base_url.trim_end_matches('/');
    let sent = st
        .http
        .post(format!("{base}/exchange"))
        .form(&[
            ("grant_type", "authorization_code"),
            ("code", req.code.as_str()),
            ("client_id", launch.client_id.as_str()),
            ("client_secret", launch.client_secret.as_str()),
        ])
        .send()
        .await;
    relay(sent, &launch.server).await
}

/// Patient list of the launch server, read with the browser's own token.
async fn patients(State(st): State<AppState>, headers: HeaderMap) -> Response {
    let cfg = st.service.config();
    let Some(launch) = &cfg.launch else {
        return error(
            StatusCode::NOT_FOUND,
            "no-launch",
            "no launch server is configured".into(),
            None,
        );
    };
    let Some(auth) = headers.get(header::AUTHORIZATION).cloned() else {
        return error(
            StatusCode::UNAUTHORIZED,
            "missing-token",
            "a bearer token is required".into(),
            None,
        );
    };
    let base = cfg.servers[&launch.server].base_url.trim_end_matches('/');
    let sent = st
        .http
        .get(format!("{base}/Patient"))
        .header(header::AUTHORIZATION, auth)
        .send()
        .await;
    relay(sent, &launch.server).await
}

/// Passes an upstream reply through with its status and JSON body.
async fn relay(sent: reqwest::Result<reqwest::Response>, server: &str) -> Response {
    let unreachable = |e: reqwest::Error| {
        error(
            StatusCode::BAD_GATEWAY,
            "upstream",
            format!("upstream server `{server}` failed: {e}"),
            Some(server),
        )
    };
    let resp = match sent {
        Ok(r) => r,
        Err(e) => return unreachable(e),
    };
    let status = StatusCode::from_u16(resp.status().as_u16()).unwrap_or(StatusCode::BAD_GATEWAY);
    match resp.text().await {
        Ok(text) => match serde_json::from_str::<Value>(&text) {
            Ok(v) => (status, Json(v)).into_response(),
            Err(_) => error(
                StatusCode::BAD_GATEWAY,
                "upstream",
                format!("upstream server `{server}` sent a non-JSON reply"),
                Some(server),
            ),
        },
        Err(e) => unreachable(e),
    }
}
