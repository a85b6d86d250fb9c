use fhirsynth::demo::{read_outputs, run_demo, DemoOptions, DEMO_FILES};

fn small(dir: &std::path::Path) -> DemoOptions {
    let mut o = DemoOptions::new(dir);
    // 1000 rows draw from 12 patients; under seed 3 both genders occur,
    // so the gender feature survives preprocessing.
    o.seed = 3;
    o.rows = 1000;
    o.synth_rows = 2000;
    o.n_boot = 50;
    o.predict_patients = 3;
    // Thousands of categories over 1000 rows; the default bounds
    // are for the full-size run.
    o.tv_mean_limit = 0.2;
    o.tv_max_limit = 0.6;
    o
}

#[tokio::test(flavor = "multi_thread")]
async fn small_demo_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let report = run_demo(&small(a.path())).await.unwrap();
    assert_eq!(report.files, DEMO_FILES);
    let names: Vec<&str> = report.steps.iter().map(|s| s.name).collect();
    assert_eq!(
        names,
        [
            "seed-data",
            "to-fhir",
            "upload",
            "download",
            "synth",
            "upload-synth",
            "risk",
            "cdss"
        ]
    );
    run_demo(&small(b.path())).await.unwrap();
    assert_eq!(read_outputs(a.path()).unwrap(), read_outputs(b.path()).unwrap());

    let seed_csv = std::fs::read_to_string(a.path().join("seed.csv")).unwrap();
    assert_eq!(seed_csv.lines().count(), 1001);
    let synth_csv = std::fs::read_to_string(a.path().join("synthetic.csv")).unwrap();
    assert_eq!(synth_csv.lines().count(), 2001);
    let p: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("predictions.json")).unwrap()).unwrap();
    assert_eq!(p["predictions"].as_array().unwrap().len(), 3);
}

#[tokio::test(flavor = "multi_thread")]
async fn broken_invariant_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = small(dir.path());
    o.tv_mean_limit = 0.0;
    let err = run_demo(&o).await.unwrap_err();
    assert_eq!(err.step, "synth");
    assert!(err.to_string().starts_with("demo step `synth` failed: fidelity"));
    // Earlier outputs stay on disk for inspection.
    assert!(dir.path().join("seed.csv").exists());
    assert!(!dir.path().join("synthetic.csv").exists());
}
