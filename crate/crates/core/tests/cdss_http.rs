mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use common::{http, start, Harness};
use fhirsynth::adapter::FhirClient;
use fhirsynth::cdss::{spawn_cdss, CdssService, FederationConfig, LaunchConfig, RunningCdss, USER_OVERRIDE};
use fhirsynth::fhir::{parse_resource, ParseMode, ResourceKind};
use fhirsynth::risk::{run_pipeline, Algorithm, PreprocessConfig, RiskModel, TrainConfig, FEATURES};
use fhirsynth::seed;
use fhirsynth::table::Table;
use fhirsynth::wrangling::{csv_to_fhir, MappingIndex};
use reqwest::StatusCode;
use serde_json::Value;

const MED: [ResourceKind; 3] = [
    ResourceKind::Medication,
    ResourceKind::MedicationRequest,
    ResourceKind::MedicationDispense,
];

/// Trained once on a table large enough for every feature to survive
/// preprocessing; the federations below serve smaller ones.
fn model() -> RiskModel {
    static MODEL: OnceLock<RiskModel> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let t = seed::generate(400, 3);
            run_pipeline(
                &t,
                &PreprocessConfig::default(),
                Algorithm::Logistic,
                &TrainConfig::default(),
                0,
                7,
            )
            .unwrap()
            .model
        })
        .clone()
}

/// The raw table cell behind each model feature for one row: the oracle
/// the assembled features are checked against.
fn expected_features(t: &Table, row: usize) -> BTreeMap<String, String> {
    FEATURES
        .iter()
        .map(|(name, col)| (name.to_string(), t.rows()[row][t.column_index(col).unwrap()].clone()))
        .collect()
}

struct Federation {
    a: Harness,
    b: Harness,
    cdss: RunningCdss,
    table: Table,
}

/// Server `a` plays the hospital system without medication data, server
/// `b` the prescription registry. Both receive the same admissions in the
/// same order, so patient and encounter ids agree across them.
async fn federation(rows: usize) -> Federation {
    let table = seed::generate(rows, 11);
    let bundles = csv_to_fhir(&table, &MappingIndex::npr_norpd()).unwrap();
    let a = start("a", &MED, true).await;
    let b = start("b", &[], true).await;
    a.client()
        .upload_bundles(&bundles, &MED.into_iter().collect())
        .await
        .unwrap();
    b.client().upload_bundles(&bundles, &BTreeSet::new()).await.unwrap();
    let mut cfg = FederationConfig::single("a", a.creds(), "unused");
    cfg.servers.insert("b".into(), b.creds());
    cfg.assign.insert(ResourceKind::MedicationRequest, "b".into());
    cfg.assign.insert(ResourceKind::Medication, "b".into());
    cfg.launch = Some(LaunchConfig {
        server: "a".into(),
        client_id: a.app.client_id.clone(),
        client_secret: a.app.client_secret.clone(),
        redirect_uri: "http://localhost:4200/callback".into(),
    });
    let service = CdssService::with_model(cfg, Some(model())).unwrap();
    let cdss = spawn_cdss(service, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    Federation { a, b, cdss, table }
}

async fn get(url: String) -> (StatusCode, Value) {
    let resp = http().get(url).send().await.unwrap();
    let status = resp.status();
    (status, resp.json().await.unwrap())
}

#[tokio::test]
async fn split_federation_assembles_every_feature() {
    let f = federation(30).await;
    for row in [0usize, 7, 29] {
        let (status, v) = get(format!("{}/predict?patient=pat-{}", f.cdss.base_url(), row + 1)).await;
        assert_eq!(status, StatusCode::OK, "{v}");
        let features: BTreeMap<String, String> = serde_json::from_value(v["features"].clone()).unwrap();
        assert_eq!(features, expected_features(&f.table, row));
        assert_eq!(features.len(), 8);
        for (name, src) in v["provenance"].as_object().unwrap() {
            let want = if matches!(name.as_str(), "atcTherapeuticGroup" | "prescriptionCategory") {
                "b"
            } else {
                "a"
            };
            assert_eq!(src, want, "{name}");
        }
        assert_eq!(v["encounterId"], format!("enc-{}", row + 1));
        let p = v["probability"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert_eq!(v["class"], u8::from(p >= v["threshold"].as_f64().unwrap()));
        assert_eq!(v["modelVersion"].as_str().unwrap().len(), 16);
    }
}

#[tokio::test]
async fn single_server_gives_the_same_answer() {
    let f = federation(20).await;
    let service = CdssService::with_model(FederationConfig::single("b", f.b.creds(), "unused"), Some(model())).unwrap();
    let single = spawn_cdss(service, "127.0.0.1:0".parse().unwrap()).await.unwrap();
    for pid in ["pat-3", "pat-20"] {
        let (_, split) = get(format!("{}/predict?patient={pid}", f.cdss.base_url())).await;
        let (status, one) = get(format!("{}/predict?patient={pid}", single.base_url())).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(split["features"], one["features"]);
        assert_eq!(split["probability"], one["probability"]);
        assert!(one["provenance"].as_object().unwrap().values().all(|s| s == "b"));
    }
}

#[tokio::test]
async fn most_recent_encounter_is_used() {
    let f = federation(4).await;
    let client = f.a.client();
    let enc = r#"{"resourceType":"Encounter","id":"x","subject":{"reference":"Patient/pat-2"},"period":{"start":"2099-01-01","end":"2099-01-03"},"hospitalization":{"dischargeLocation":"home"}}"#;
    let created = client
        .create(&parse_resource(enc, ParseMode::Strict).unwrap())
        .await
        .unwrap();
    let (status, v) = get(format!("{}/predict?patient=pat-2", f.cdss.base_url())).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["encounterId"], created.id_value());
    assert_eq!(v["encounterId"], "enc-5");
    // The new admission has no Condition yet, so the diagnosis is empty.
    assert_eq!(v["features"]["diagnosisCode"], "");
    assert!(v["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w.as_str().unwrap().contains("Condition")));
}

#[tokio::test]
async fn override_replaces_only_that_feature() {
    let f = federation(10).await;
    let base = f.cdss.base_url();
    let (_, plain) = get(format!("{base}/predict?patient=pat-4")).await;
    let (status, over) = get(format!("{base}/predict?patient=pat-4&override.atc=N02BE01")).await;
    assert_eq!(status, StatusCode::OK);
    let (p, o) = (
        plain["features"].as_object().unwrap(),
        over["features"].as_object().unwrap(),
    );
    for (k, v) in p {
        if k == "atcTherapeuticGroup" {
            assert_eq!(o[k], "N02BE01");
            assert_eq!(over["provenance"][k], USER_OVERRIDE);
        } else {
            assert_eq!(o[k], *v, "{k}");
            assert_eq!(over["provenance"][k], plain["provenance"][k]);
        }
    }
    for bad in [
        "override.atc=n02",
        "override.atc=N02BE011",
        "dose=3",
        "override.category=%3Cx%3E",
    ] {
        let (status, v) = get(format!("{base}/predict?patient=pat-4&{bad}")).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}: {v}");
    }
    let (status, _) = get(format!("{base}/predict")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_patient_is_not_found() {
    let f = federation(3).await;
    let (status, v) = get(format!("{}/predict?patient=pat-99", f.cdss.base_url())).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown-patient");
}

#[tokio::test]
async fn patient_without_encounter_is_unprocessable() {
    let f = federation(3).await;
    let p = parse_resource(
        r#"{"resourceType":"Patient","id":"x","gender":"female"}"#,
        ParseMode::Strict,
    )
    .unwrap();
    let id = f.a.client().create(&p).await.unwrap();
    let (status, v) = get(format!("{}/predict?patient={}", f.cdss.base_url(), id.id_value())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["server"], "a");
}

#[tokio::test]
async fn stopped_upstream_is_a_bad_gateway_naming_it() {
    let f = federation(5).await;
    let base = f.cdss.base_url();
    let (status, health) = get(format!("{base}/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    f.b.running.shutdown().await.unwrap();
    let (status, v) = get(format!("{base}/predict?patient=pat-1")).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{v}");
    assert_eq!(v["server"], "b");
    assert!(v["message"].as_str().unwrap().contains("`b`"));
    let (status, health) = get(format!("{base}/healthz")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "degraded");
    assert_eq!(health["upstreams"]["a"], "ok");
    assert_eq!(health["upstreams"]["b"], "unreachable");
}

#[tokio::test]
async fn missing_model_answers_service_unavailable() {
    let f = federation(2).await;
    let dir = tempfile::tempdir().unwrap();
    let cfg = FederationConfig::single("a", f.a.creds(), dir.path().join("absent.bin"));
    let cdss = spawn_cdss(CdssService::new(cfg).unwrap(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap();
    let (status, v) = get(format!("{}/predict?patient=pat-1", cdss.base_url())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "no-model");
    let (status, _) = get(format!("{}/healthz", cdss.base_url())).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn model_file_is_loaded_from_config() {
    let f = federation(12).await;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("risk.bin");
    model().save(&path).unwrap();
    let cfg = FederationConfig::single("b", f.b.creds(), &path);
    let cfg_path = dir.path().join("cdss.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let service = CdssService::new(FederationConfig::load(&cfg_path).unwrap()).unwrap();
    assert!(service.model().is_some());
    let p = service.predict("pat-1", &Default::default()).await.unwrap();
    assert_eq!(p.algorithm, "logistic");
}

/// The browser flow: bootstrap, authorize on the FHIR server, exchange the
/// code through the service, list patients with the resulting token.
#[tokio::test]
async fn launch_flow_through_the_service() {
    let f = federation(3).await;
    let base = f.cdss.base_url();
    let (status, boot) = get(format!("{base}/bootstrap")).await;
    assert_eq!(status, StatusCode::OK);
    assert!(!boot.to_string().contains(&f.a.app.client_secret));
    let authorize = boot["authorizeUrl"].as_str().unwrap();
    let code: Value = http()
        .get(authorize)
        .query(&[("client_id", boot["clientId"].as_str().unwrap())])
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let exchange = |code: Value| {
        let url = format!("{base}{}", boot["exchangeUrl"].as_str().unwrap());
        async move {
            http()
                .post(url)
                .json(&serde_json::json!({"code": code}))
                .send()
                .await
                .unwrap()
        }
    };
    let resp = exchange(code["code"].clone()).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let token: Value = resp.json().await.unwrap();
    let token = token["access_token"].as_str().unwrap().to_string();
    assert_eq!(exchange(code["code"].clone()).await.status(), StatusCode::UNAUTHORIZED);

    let resp = http()
        .get(format!("{base}/patients"))
        .bearer_auth(&token)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bundle: Value = resp.json().await.unwrap();
    assert_eq!(bundle["total"], 3);
    let resp = http().get(format!("{base}/patients")).send().await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let resp = http()
        .get(format!("{base}/patients"))
        .bearer_auth("forged")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);

    let pre = http()
        .request(reqwest::Method::OPTIONS, format!("{base}/predict"))
        .header("origin", "http://localhost:4200")
        .header("access-control-request-method", "GET")
        .send()
        .await
        .unwrap();
    assert_eq!(pre.headers()["access-control-allow-origin"], "http://localhost:4200");
}

#[tokio::test]
async fn upstream_clients_are_shared_per_server() {
    let f = federation(2).await;
    let names: Vec<&String> = f.cdss.service.clients().map(|(n, _)| n).collect();
    assert_eq!(names, ["a", "b"]);
    let c: &FhirClient = f.cdss.service.client("a").unwrap();
    assert_eq!(c.base_url(), f.a.running.base_url());
}
