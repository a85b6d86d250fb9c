//! End-to-end run of the whole workflow against in-process servers:
//! seed data, conversion, upload to a sensitive server, download,
//! synthetic generation, upload to a synthetic server, risk model training
//! and federated prediction with a server lacking medication data.
//!
//! Every step checks its invariants and stops the run on the first broken
//! one. All outputs are functions of the seed, so a rerun writes the same
//! bytes.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::adapter::{FhirClient, ServerCredentials};
use crate::cdss::{spawn_cdss, CdssService, FederationConfig, PredictionResponse, FEATURE_KINDS};
use crate::fhir::{validate_bundle, Bundle, ResourceKind};
use crate::risk::{run_pipeline, Algorithm, PreprocessConfig, TrainConfig, FEATURES};
use crate::seed;
use crate::server::{spawn, FhirServer, RunningServer, ServerOptions};
use crate::synth::{fit, quality_report, sample, SchemaHints};
use crate::table::Table;
use crate::wrangling::{csv_to_fhir, fhir_to_csv, MappingIndex};

/// Default fidelity bounds on per-column TV distance.
pub const TV_MEAN_LIMIT: f64 = 0.05;
pub const TV_MAX_LIMIT: f64 = 0.15;

/// Kinds the hospital-system stand-in does not provide.
pub const OPEN_DIPS_DISABLED: [ResourceKind; 3] = [
    ResourceKind::Medication,
    ResourceKind::MedicationRequest,
    ResourceKind::MedicationDispense,
];

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOptions {
    pub rows: usize,
    pub synth_rows: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub algorithm: Algorithm,
    pub n_boot: usize,
    /// Patients scored through the decision-support service at the end.
    pub predict_patients: usize,
    /// Bounds on the mean and the largest per-column TV distance between
    /// seed and synthetic data. Small runs are noisier and may need more.
    pub tv_mean_limit: f64,
    pub tv_max_limit: f64,
}

impl DemoOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> DemoOptions {
        DemoOptions {
            rows: 5000,
            synth_rows: 10000,
            seed: 7,
            out_dir: out_dir.into(),
            algorithm: Algorithm::Gbtree,
            n_boot: 1000,
            predict_patients: 5,
            tv_mean_limit: TV_MEAN_LIMIT,
            tv_max_limit: TV_MAX_LIMIT,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("demo step `{step}` failed: {message}")]
pub struct DemoError {
    pub step: &'static str,
    pub message: String,
}

fn fail(step: &'static str) -> impl Fn(String) -> DemoError {
    move |message| DemoError { step, message }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub name: &'static str,
    pub summary: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub steps: Vec<StepReport>,
    /// Files written, relative to the output directory, sorted.
    pub files: Vec<String>,
}

impl DemoReport {
    /// The report without timings; written as `report.txt`.
    pub fn stable_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!("{}. {}: {}\n", i + 1, s.name, s.summary));
        }
        out
    }
}

impl fmt::Display for DemoReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                f,
                "{:>2}. {:<14} {:>8.2}s  {}",
                i + 1,
                s.name,
                s.elapsed.as_secs_f64(),
                s.summary
            )?;
        }
        Ok(())
    }
}

struct Run {
    out_dir: PathBuf,
    steps: Vec<StepReport>,
    files: BTreeSet<String>,
    started: Instant,
}

impl Run {
    fn write(&mut self, step: &'static str, name: &str, text: &str) -> Result<(), DemoError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| DemoError {
            step,
            message: format!("{}: {e}", path.display()),
        })?;
        self.files.insert(name.to_string());
        Ok(())
    }

    fn done(&mut self, name: &'static str, summary: String) {
        tracing::info!(step = name, "{summary}");
        self.steps.push(StepReport {
            name,
            summary,
            elapsed: self.started.elapsed(),
        });
        self.started = Instant::now();
    }
}

fn check(step: &'static str, ok: bool, what: impl FnOnce() -> String) -> Result<(), DemoError> {
    if ok {
        Ok(())
    } else {
        Err(DemoError { step, message: what() })
    }
}

async fn start_server(name: &str, disabled: &[ResourceKind]) -> Result<(RunningServer, ServerCredentials), DemoError> {
    let step = "servers";
    let server = FhirServer::new(ServerOptions {
        name: name.to_string(),
        disabled_kinds: disabled.iter().copied().collect(),
        strict_links: true,
    });
    let app = server
        .register_app("fhirsynth-demo", BTreeSet::new())
        .map_err(|e| fail(step)(e.to_string()))?;
    let running = spawn(server, "127.0.0.1:0".parse().expect("literal address"))
        .await
        .map_err(|e| fail(step)(e.to_string()))?;
    let creds = ServerCredentials::new(running.base_url(), app.client_id, app.client_secret);
    Ok((running, creds))
}

fn client(name: &str, creds: &ServerCredentials, step: &'static str) -> Result<FhirClient, DemoError> {
    FhirClient::new(name, creds.clone()).map_err(|e| fail(step)(e.to_string()))
}

fn to_bundles(t: &Table, idx: &MappingIndex, step: &'static str) -> Result<Vec<Bundle>, DemoError> {
    let bundles = csv_to_fhir(t, idx).map_err(|e| fail(step)(e.to_string()))?;
    check(step, bundles.len() == t.n_rows(), || {
        format!("{} rows gave {} bundles", t.n_rows(), bundles.len())
    })?;
    if let Some((i, report)) = bundles
        .iter()
        .map(validate_bundle)
        .enumerate()
        .find(|(_, r)| !r.is_empty())
    {
        return Err(fail(step)(format!("bundle {i} is invalid: {report}")));
    }
    Ok(bundles)
}

async fn round_trip(
    c: &FhirClient,
    bundles: &[Bundle],
    idx: &MappingIndex,
    expected: &Table,
    step: &'static str,
) -> Result<(usize, Table), DemoError> {
    let map = c
        .upload_bundles(bundles, &BTreeSet::new())
        .await
        .map_err(|e| fail(step)(e.to_string()))?;
    let resources: usize = bundles.iter().map(Bundle::len).sum();
    check(step, map.len() == resources, || {
        format!("{resources} resources sent, {} created", map.len())
    })?;
    let down = c.download_all().await.map_err(|e| fail(step)(e.to_string()))?;
    let table = fhir_to_csv(&down, idx).map_err(|e| fail(step)(e.to_string()))?;
    check(step, table == *expected, || {
        "downloaded table differs from the uploaded one".to_string()
    })?;
    Ok((resources, table))
}

#[derive(Serialize)]
struct PredictionsFile<'a> {
    predictions: &'a [PredictionResponse],
}

/// Runs the whole workflow, writing its artifacts to `opts.out_dir`.
pub async fn run_demo(opts: &DemoOptions) -> Result<DemoReport, DemoError> {
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| DemoError {
        step: "setup",
        message: format!("{}: {e}", opts.out_dir.display()),
    })?;
    let mut run = Run {
        out_dir: opts.out_dir.clone(),
        steps: Vec::new(),
        files: BTreeSet::new(),
        started: Instant::now(),
    };
    let idx = MappingIndex::npr_norpd();

    let step = "seed-data";
    let seed_table = seed::generate(opts.rows, opts.seed);
    check(
        step,
        seed_table.n_rows() == opts.rows && seed_table.n_cols() == 35,
        || format!("got {} rows x {} columns", seed_table.n_rows(), seed_table.n_cols()),
    )?;
    run.write(step, "seed.csv", &seed_table.to_csv_string())?;
    run.done(
        step,
        format!("{} rows x {} columns -> seed.csv", opts.rows, seed_table.n_cols()),
    );

    let step = "to-fhir";
    let bundles = to_bundles(&seed_table, &idx, step)?;
    let resources: usize = bundles.iter().map(Bundle::len).sum();
    run.done(
        step,
        format!("{} bundles, {resources} resources, all valid", bundles.len()),
    );

    let (sensitive, sensitive_creds) = start_server("sensitive", &[]).await?;
    let (synthetic, synthetic_creds) = start_server("synthetic", &[]).await?;
    let (open_dips, open_dips_creds) = start_server("open-dips", &OPEN_DIPS_DISABLED).await?;

    let step = "upload";
    let c = client("sensitive", &sensitive_creds, step)?;
    let (sent, downloaded) = round_trip(&c, &bundles, &idx, &seed_table, step).await?;
    run.done(step, format!("{sent} resources on `sensitive`, no dangling references"));
    let step = "download";
    run.done(
        step,
        format!(
            "{} bundles back from `sensitive`, to-csv equals seed.csv",
            downloaded.n_rows()
        ),
    );
    drop(bundles);

    let step = "synth";
    let hints = SchemaHints::npr_norpd().restricted_to(downloaded.header());
    let model = fit(&downloaded, &hints, opts.seed).map_err(|e| fail(step)(e.to_string()))?;
    let synth = sample(&model, opts.synth_rows, opts.seed.wrapping_add(1));
    let report = quality_report(&downloaded, &synth, &model).map_err(|e| fail(step)(e.to_string()))?;
    check(step, synth.n_rows() == opts.synth_rows, || {
        format!("sampled {} rows, wanted {}", synth.n_rows(), opts.synth_rows)
    })?;
    check(step, synth.header() == downloaded.header(), || {
        "header changed".to_string()
    })?;
    check(
        step,
        report.tv_mean <= opts.tv_mean_limit && report.tv_max <= opts.tv_max_limit,
        || {
            format!(
                "fidelity out of bounds: tv mean {:.4} (limit {}), tv max {:.4} (limit {})",
                report.tv_mean, opts.tv_mean_limit, report.tv_max, opts.tv_max_limit
            )
        },
    )?;
    run.write(step, "synth-model.json", &model.to_json())?;
    run.write(step, "synthetic.csv", &synth.to_csv_string())?;
    run.write(step, "synth-report.json", &report.to_json())?;
    run.done(
        step,
        format!(
            "{} -> {} rows, tv mean {:.4} max {:.4} -> synthetic.csv",
            downloaded.n_rows(),
            synth.n_rows(),
            report.tv_mean,
            report.tv_max
        ),
    );

    let step = "upload-synth";
    let synth_bundles = to_bundles(&synth, &idx, step)?;
    let c = client("synthetic", &synthetic_creds, step)?;
    let (sent, synth_down) = round_trip(&c, &synth_bundles, &idx, &synth, step).await?;
    run.done(step, format!("{sent} resources on `synthetic`, round trip exact"));

    let step = "risk";
    let out = run_pipeline(
        &synth_down,
        &PreprocessConfig::default(),
        opts.algorithm,
        &TrainConfig::default(),
        opts.n_boot,
        opts.seed.wrapping_add(2),
    )
    .map_err(|e| fail(step)(e.to_string()))?;
    let m = &out.metrics;
    check(
        step,
        m.accuracy.contains_point() && m.auc.contains_point() && m.f1.contains_point(),
        || "a bootstrap interval misses its point estimate".to_string(),
    )?;
    let model_path = opts.out_dir.join("risk-model.bin");
    out.model.save(&model_path).map_err(|e| fail(step)(e.to_string()))?;
    run.files.insert("risk-model.bin".into());
    run.write(step, "metrics.json", &m.to_json())?;
    let audit: String = out.audit.iter().map(|a| format!("{a}\n")).collect();
    run.write(step, "preprocess-audit.txt", &audit)?;
    run.done(
        step,
        format!(
            "{} on {} train / {} test rows, auc {:.4} [{:.4}, {:.4}] -> risk-model.bin",
            opts.algorithm,
            out.train_rows.len(),
            out.test_rows.len(),
            m.auc.point,
            m.auc.lo,
            m.auc.hi
        ),
    );

    // The hospital stand-in receives the first admissions without their
    // medication data, in the same order, so patient and encounter ids
    // agree with the synthetic server.
    let step = "cdss";
    let k = opts.predict_patients.min(synth_bundles.len());
    let exclude: BTreeSet<ResourceKind> = OPEN_DIPS_DISABLED.into_iter().collect();
    client("open-dips", &open_dips_creds, step)?
        .upload_bundles(&synth_bundles[..k], &exclude)
        .await
        .map_err(|e| fail(step)(e.to_string()))?;
    let mut cfg = FederationConfig::single("open-dips", open_dips_creds.clone(), &model_path);
    cfg.servers.insert("synthetic".into(), synthetic_creds.clone());
    cfg.assign.insert(ResourceKind::MedicationRequest, "synthetic".into());
    cfg.assign.insert(ResourceKind::Medication, "synthetic".into());
    let service = CdssService::new(cfg).map_err(|e| fail(step)(e.to_string()))?;
    check(step, service.model().is_some(), || {
        "risk model did not load".to_string()
    })?;
    let cdss = spawn_cdss(service, "127.0.0.1:0".parse().expect("literal address"))
        .await
        .map_err(|e| fail(step)(e.to_string()))?;
    let http = reqwest::Client::builder()
        .no_proxy()
        .build()
        .map_err(|e| fail(step)(e.to_string()))?;
    let mut predictions = Vec::with_capacity(k);
    for i in 1..=k {
        let url = format!("{}/predict?patient=pat-{i}", cdss.base_url());
        let resp = http.get(&url).send().await.map_err(|e| fail(step)(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| fail(step)(e.to_string()))?;
        check(step, status.is_success(), || format!("pat-{i}: HTTP {status}: {text}"))?;
        let p: PredictionResponse = serde_json::from_str(&text).map_err(|e| fail(step)(e.to_string()))?;
        check_federated(&p, &idx, step)?;
        predictions.push(p);
    }
    cdss.shutdown().await.map_err(|e| fail(step)(e.to_string()))?;
    let json = serde_json::to_string_pretty(&PredictionsFile {
        predictions: &predictions,
    })
    .expect("predictions serialize");
    run.write(step, "predictions.json", &json)?;
    run.done(
        step,
        format!("{k} patients scored, 8/8 features each, split across `open-dips` and `synthetic`"),
    );

    for s in [sensitive, synthetic, open_dips] {
        s.shutdown().await.map_err(|e| fail("servers")(e.to_string()))?;
    }

    let mut report = DemoReport {
        steps: run.steps.clone(),
        files: Vec::new(),
    };
    run.write("report", "report.txt", &report.stable_text())?;
    report.files = run.files.into_iter().collect();
    Ok(report)
}

/// Every model feature present, sourced from the server its kind is
/// assigned to.
fn check_federated(p: &PredictionResponse, idx: &MappingIndex, step: &'static str) -> Result<(), DemoError> {
    check(
        step,
        p.features.len() == FEATURES.len() && p.provenance.len() == FEATURES.len(),
        || format!("{}: {} features assembled", p.patient_id, p.features.len()),
    )?;
    for (name, column) in FEATURES {
        let (kind, _) = idx
            .binding_for_column(column)
            .ok_or_else(|| fail(step)(format!("{column} is not mapped")))?;
        debug_assert!(FEATURE_KINDS.contains(&kind));
        let want = if OPEN_DIPS_DISABLED.contains(&kind) {
            "synthetic"
        } else {
            "open-dips"
        };
        let got = p.provenance.get(name).map(String::as_str);
        check(step, got == Some(want), || {
            format!("{}: {name} came from {got:?}, expected `{want}`", p.patient_id)
        })?;
    }
    check(step, (0.0..=1.0).contains(&p.probability), || {
        format!("{}: probability {} out of range", p.patient_id, p.probability)
    })
}

/// Names of the files a demo run writes.
pub const DEMO_FILES: [&str; 9] = [
    "metrics.json",
    "predictions.json",
    "preprocess-audit.txt",
    "report.txt",
    "risk-model.bin",
    "seed.csv",
    "synth-model.json",
    "synth-report.json",
    "synthetic.csv",
];

/// Reads every demo output into memory, for comparing two runs.
pub fn read_outputs(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    DEMO_FILES
        .iter()
        .map(|f| Ok((f.to_string(), std::fs::read(dir.join(f))?)))
        .collect()
}
