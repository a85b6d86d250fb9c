//! The golden corpus in testdata/golden is written by
//! scripts/make_goldens.py from its own copy of the field order.

use std::path::PathBuf;

use fhirsynth::fhir::{parse_resource, serialize_resource, ParseMode, ResourceKind};
use fhirsynth::wrangling::{flatten_resource, render_template, FlatRecord};

fn golden(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../testdata/golden")
        .join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn canonical(kind: ResourceKind) -> String {
    golden(&format!("{kind}.json")).trim_end().to_string()
}

fn flat(kind: ResourceKind) -> Vec<(String, String)> {
    serde_json::from_str(&golden(&format!("{kind}.flat.json"))).unwrap()
}

#[test]
fn loose_documents_serialize_to_the_canonical_form() {
    for kind in ResourceKind::ALL {
        let r = parse_resource(&golden(&format!("{kind}.input.json")), ParseMode::Strict).unwrap();
        assert_eq!(r.kind(), kind);
        assert_eq!(serialize_resource(&r), canonical(kind), "{kind}");
    }
}

#[test]
fn canonical_documents_are_fixed_points() {
    for kind in ResourceKind::ALL {
        let text = canonical(kind);
        let r = parse_resource(&text, ParseMode::Strict).unwrap();
        assert_eq!(serialize_resource(&r), text, "{kind}");
        assert_eq!(parse_resource(&serialize_resource(&r), ParseMode::Strict).unwrap(), r);
    }
}

#[test]
fn flatten_matches_the_golden_records() {
    for kind in ResourceKind::ALL {
        let r = parse_resource(&canonical(kind), ParseMode::Strict).unwrap();
        let got: Vec<(String, String)> = flatten_resource(&r).into_iter().collect();
        assert_eq!(got, flat(kind), "{kind}");
    }
}

#[test]
fn templates_render_the_corpus_byte_identically() {
    for kind in ResourceKind::ALL {
        let values: FlatRecord = flat(kind).into_iter().collect();
        let r = render_template(kind, &values).unwrap();
        assert_eq!(serialize_resource(&r), canonical(kind), "{kind}");
    }
}

#[test]
fn corpus_covers_every_kind_once() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/golden");
    let mut canon: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".json") && n.matches('.').count() == 1)
        .collect();
    canon.sort();
    let mut want: Vec<String> = ResourceKind::ALL.iter().map(|k| format!("{k}.json")).collect();
    want.sort();
    assert_eq!(canon, want);
}
