use super::*;
use crate::fhir::{parse_resource, ParseMode};

fn creds(port: u16) -> ServerCredentials {
    ServerCredentials::new(format!("http://127.0.0.1:{port}"), "id", "secret")
}

fn split_config() -> FederationConfig {
    let mut cfg = FederationConfig::single("a", creds(1), "model.bin");
    cfg.servers.insert("b".into(), creds(2));
    for k in [ResourceKind::MedicationRequest, ResourceKind::Medication] {
        cfg.assign.insert(k, "b".into());
    }
    cfg
}

#[test]
fn config_round_trips_and_validates() {
    let cfg = split_config();
    cfg.validate().unwrap();
    assert_eq!(FederationConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

    let mut missing = cfg.clone();
    missing.assign.remove(&ResourceKind::Condition);
    assert!(missing.validate().unwrap_err().to_string().contains("Condition"));

    let mut unknown = cfg.clone();
    unknown.assign.insert(ResourceKind::Patient, "c".into());
    assert!(unknown.validate().is_err());

    let mut split_med = cfg.clone();
    split_med.assign.insert(ResourceKind::Medication, "a".into());
    assert!(split_med.validate().is_err());

    let mut extra = cfg.clone();
    extra.assign.insert(ResourceKind::Location, "a".into());
    assert!(extra.validate().is_err());

    let mut launch = cfg;
    launch.launch = Some(LaunchConfig {
        server: "z".into(),
        client_id: "c".into(),
        client_secret: "s".into(),
        redirect_uri: "http://localhost:4200/callback".into(),
    });
    assert!(launch.validate().is_err());
}

#[test]
fn config_from_toml_text() {
    let text = r#"
model = "risk.bin"
port = 8090

[servers.sensitive]
base_url = "http://127.0.0.1:8081"
client_id = "a"
client_secret = "b"

[assign]
Patient = "sensitive"
Encounter = "sensitive"
Condition = "sensitive"
MedicationRequest = "sensitive"
Medication = "sensitive"
"#;
    let cfg = FederationConfig::from_toml(text).unwrap();
    assert_eq!(cfg.addr().unwrap().port(), 8090);
    assert_eq!(cfg.cors_origins, ["http://localhost:4200"]);
    assert!(FederationConfig::from_toml("model = 1").is_err());
}

#[test]
fn atc_override_shape() {
    for ok in ["C09", "C09A", "C09AA", "C09AA05", "N02"] {
        let o = Overrides {
            atc: Some(ok.into()),
            category: None,
        };
        assert!(o.validate().is_ok(), "{ok}");
    }
    for bad in ["", "c09", "C9", "C09AA0", "C09AA05X", "CC9", "C09a", "C0 9"] {
        let o = Overrides {
            atc: Some(bad.into()),
            category: None,
        };
        assert!(o.validate().is_err(), "{bad}");
    }
    let cat = |c: &str| {
        Overrides {
            atc: None,
            category: Some(c.into()),
        }
        .validate()
    };
    assert!(cat("Blue prescription").is_ok());
    assert!(cat(" ").is_err());
    assert!(cat("<script>").is_err());
}

fn enc(id: &str, start: Option<&str>) -> FhirResource {
    let period = start
        .map(|s| format!(r#","period":{{"start":"{s}"}}"#))
        .unwrap_or_default();
    parse_resource(
        &format!(r#"{{"resourceType":"Encounter","id":"{id}","subject":{{"reference":"Patient/pat-1"}}{period}}}"#),
        ParseMode::Strict,
    )
    .unwrap()
}

#[test]
fn most_recent_encounter_breaks_ties_by_id() {
    assert!(most_recent_encounter(&[]).is_none());
    let es = [
        enc("enc-10", Some("2020-03-01")),
        enc("enc-2", Some("2020-03-01")),
        enc("enc-1", Some("2019-01-01")),
        enc("enc-3", None),
    ];
    assert_eq!(most_recent_encounter(&es).unwrap().id_value(), "enc-2");
    assert_eq!(most_recent_encounter(&es[2..]).unwrap().id_value(), "enc-1");
    assert_eq!(most_recent_encounter(&es[3..]).unwrap().id_value(), "enc-3");
}
