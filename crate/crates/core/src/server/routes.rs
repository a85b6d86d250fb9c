use std::collections::HashMap;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Router};
use serde_json::{json, Value};

use super::auth::{AccessToken, AuthError, CODE_TTL_SECS};
use super::store::{searchset_json, SearchQuery};
use super::FhirServer;
use crate::fhir::{field_def, from_value, FieldType, ParseMode, ResourceKind};

pub const FHIR_JSON: &str = "application/fhir+json";

pub fn router(server: FhirServer) -> Router {
    Router::new()
        .route("/token", post(token))
        .route("/authorize", get(authorize))
        .route("/exchange", post(exchange))
        .route("/{kind}", post(create).get(search))
        .route("/{kind}/{id}", get(read))
        .with_state(server)
}

/// Error reply. OAuth endpoints answer `{"error", "error_description"}`,
/// resource endpoints a FHIR OperationOutcome.
enum ApiError {
    OAuth(StatusCode, &'static str, String),
    Outcome(StatusCode, &'static str, String),
}

impl ApiError {
    fn outcome(status: StatusCode, code: &'static str, msg: impl Into<String>) -> ApiError {
        ApiError::Outcome(status, code, msg.into())
    }

    fn oauth(status: StatusCode, code: &'static str, msg: impl Into<String>) -> ApiError {
        ApiError::OAuth(status, code, msg.into())
    }

    fn from_auth(e: AuthError) -> ApiError {
        let code = match e {
            AuthError::InvalidClient => "invalid_client",
            AuthError::MissingToken | AuthError::InvalidToken | AuthError::ExpiredToken => "invalid_token",
            AuthError::InvalidCode | AuthError::ExpiredCode | AuthError::ClientMismatch => "invalid_grant",
        };
        ApiError::oauth(StatusCode::UNAUTHORIZED, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        match self {
            ApiError::OAuth(status, code, msg) => {
                let mut resp = (status, axum::Json(json!({"error": code, "error_description": msg}))).into_response();
                if status == StatusCode::UNAUTHORIZED {
                    resp.headers_mut()
                        .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
                }
                resp
            }
            ApiError::Outcome(status, code, msg) => {
                let body = json!({
                    "resourceType": "OperationOutcome",
                    "issue": [{"severity": "error", "code": code, "diagnostics": msg}],
                });
                let mut resp = (status, [(header::CONTENT_TYPE, FHIR_JSON)], body.to_string()).into_response();
                if status == StatusCode::UNAUTHORIZED {
                    resp.headers_mut()
                        .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
                }
                resp
            }
        }
    }
}

fn token_json(t: &AccessToken, now: u64) -> Value {
    let scope: Vec<&str> = t.scopes.iter().map(String::as_str).collect();
    json!({
        "access_token": t.token,
        "token_type": "Bearer",
        "expires_in": t.expiry.saturating_sub(now),
        "scope": scope.join(" "),
    })
}

fn field<'a>(form: &'a HashMap<String, String>, name: &str) -> Result<&'a str, ApiError> {
    form.get(name)
        .map(String::as_str)
        .ok_or_else(|| ApiError::oauth(StatusCode::BAD_REQUEST, "invalid_request", format!("missing `{name}`")))
}

async fn token(State(s): State<FhirServer>, Form(form): Form<HashMap<String, String>>) -> Result<Response, ApiError> {
    let grant = field(&form, "grant_type")?;
    if grant != "client_credentials" {
        return Err(ApiError::oauth(
            StatusCode::BAD_REQUEST,
            "unsupported_grant_type",
            format!("grant type `{grant}` is not supported here"),
        ));
    }
    let now = s.now();
    let t = s
        .auth()
        .issue_token(field(&form, "client_id")?, field(&form, "client_secret")?, now)
        .map_err(ApiError::from_auth)?;
    Ok(axum::Json(token_json(&t, now)).into_response())
}

async fn authorize(
    State(s): State<FhirServer>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let client_id = field(&q, "client_id")?;
    let redirect =
        match q.get("redirect_uri") {
            Some(r) => Some(reqwest::Url::parse(r).map_err(|e| {
                ApiError::oauth(StatusCode::BAD_REQUEST, "invalid_request", format!("redirect_uri: {e}"))
            })?),
            None => None,
        };
    let now = s.now();
    let code = s.auth().authorize(client_id, now).map_err(ApiError::from_auth)?;
    let state = q.get("state");
    match redirect {
        Some(mut url) => {
            url.query_pairs_mut().append_pair("code", &code);
            if let Some(st) = state {
                url.query_pairs_mut().append_pair("state", st);
            }
            let location = HeaderValue::from_str(url.as_str())
                .map_err(|e| ApiError::oauth(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
            Ok((StatusCode::FOUND, [(header::LOCATION, location)]).into_response())
        }
        None => {
            let mut body = json!({"code": code, "expires_in": CODE_TTL_SECS});
            if let Some(st) = state {
                body["state"] = Value::String(st.clone());
            }
            Ok(axum::Json(body).into_response())
        }
    }
}

async fn exchange(
    State(s): State<FhirServer>,
    Form(form): Form<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    if let Some(g) = form.get("grant_type").filter(|g| *g != "authorization_code") {
        return Err(ApiError::oauth(
            StatusCode::BAD_REQUEST,
            "unsupported_grant_type",
            format!("grant type `{g}` is not supported here"),
        ));
    }
    let now = s.now();
    let t = s
        .auth()
        .exchange(
            field(&form, "code")?,
            field(&form, "client_id")?,
            field(&form, "client_secret")?,
            now,
        )
        .map_err(ApiError::from_auth)?;
    Ok(axum::Json(token_json(&t, now)).into_response())
}

/// Bearer check, then kind resolution; auth always comes first.
fn admit(s: &FhirServer, headers: &HeaderMap, kind: &str) -> Result<ResourceKind, ApiError> {
    let unauthorized = |e: AuthError| ApiError::outcome(StatusCode::UNAUTHORIZED, "login", e.to_string());
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| unauthorized(AuthError::MissingToken))?;
    s.auth().check_token(token.trim(), s.now()).map_err(unauthorized)?;
    let kind: ResourceKind = kind.parse().map_err(|_| {
        ApiError::outcome(
            StatusCode::NOT_FOUND,
            "not-supported",
            format!("unknown resource type `{kind}`"),
        )
    })?;
    if !s.is_enabled(kind) {
        return Err(ApiError::outcome(
            StatusCode::NOT_FOUND,
            "not-supported",
            format!("{kind} is not provided by server `{}`", s.name()),
        ));
    }
    Ok(kind)
}

fn fhir_body(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, FHIR_JSON)], body).into_response()
}

async fn create(
    State(s): State<FhirServer>,
    Path(kind): Path<String>,
    headers: HeaderMap,
    body: String,
) -> Result<Response, ApiError> {
    let kind = admit(&s, &headers, &kind)?;
    let bad = |msg: String| ApiError::outcome(StatusCode::BAD_REQUEST, "invalid", msg);
    let mut v: Value = serde_json::from_str(&body).map_err(|e| bad(format!("body is not JSON: {e}")))?;
    let obj = v
        .as_object_mut()
        .ok_or_else(|| bad("body is not a JSON object".into()))?;
    if obj.get("resourceType").and_then(Value::as_str) != Some(kind.as_str()) {
        return Err(bad(format!("body resourceType does not match /{kind}")));
    }
    // The server assigns the id; a client id, if any, is only a placeholder.
    obj.insert("id".into(), Value::String("new".into()));
    let resource = from_value(&v, ParseMode::Strict).map_err(|e| bad(e.to_string()))?;
    resource.validate().map_err(|e| bad(e.to_string()))?;
    for (field, target) in resource.references() {
        if let Some(FieldType::Ref(expected)) = field_def(kind, field).map(|d| d.ty) {
            if target.kind() != expected {
                return Err(bad(format!(
                    "{kind}.{field} must reference a {expected}, found {target}"
                )));
            }
        }
    }

    let mut store = s.store_mut();
    if s.options().strict_links {
        if let Some((field, target)) = resource.references().into_iter().find(|(_, t)| !store.contains(t)) {
            return Err(ApiError::outcome(
                StatusCode::UNPROCESSABLE_ENTITY,
                "not-found",
                format!("{kind}.{field} references {target}, which is not stored"),
            ));
        }
    }
    let stored = store.create(resource);
    let location = format!("/{kind}/{}", stored.resource.id_value());
    let mut resp = fhir_body(StatusCode::CREATED, stored.canonical.clone());
    resp.headers_mut().insert(
        header::LOCATION,
        HeaderValue::from_str(&location).expect("ids are header-safe"),
    );
    Ok(resp)
}

async fn read(
    State(s): State<FhirServer>,
    Path((kind, id)): Path<(String, String)>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let kind = admit(&s, &headers, &kind)?;
    let store = s.store();
    match store.get(kind, &id) {
        Some(stored) => Ok(fhir_body(StatusCode::OK, stored.canonical.clone())),
        None => Err(ApiError::outcome(
            StatusCode::NOT_FOUND,
            "not-found",
            format!("{kind}/{id} not found"),
        )),
    }
}

fn strip_kind(value: &str, kind: ResourceKind) -> String {
    value
        .strip_prefix(kind.as_str())
        .and_then(|v| v.strip_prefix('/'))
        .unwrap_or(value)
        .to_string()
}

async fn search(
    State(s): State<FhirServer>,
    Path(kind): Path<String>,
    headers: HeaderMap,
    Query(params): Query<Vec<(String, String)>>,
) -> Result<Response, ApiError> {
    let kind = admit(&s, &headers, &kind)?;
    let bad = |msg: String| ApiError::outcome(StatusCode::BAD_REQUEST, "not-supported", msg);
    let mut q = SearchQuery::default();
    for (name, value) in params {
        match name.as_str() {
            "patient" => q.patient = Some(strip_kind(&value, ResourceKind::Patient)),
            "encounter" => q.encounter = Some(strip_kind(&value, ResourceKind::Encounter)),
            "_count" => {
                q.count = Some(
                    value
                        .parse()
                        .map_err(|_| bad(format!("_count `{value}` is not a nonnegative integer")))?,
                )
            }
            other => return Err(bad(format!("unsupported search parameter `{other}`"))),
        }
    }
    let store = s.store();
    let (hits, total) = store.search(kind, &q);
    Ok(fhir_body(StatusCode::OK, searchset_json(&hits, total)))
}
