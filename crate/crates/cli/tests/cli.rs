use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fhirsynth"));
    c.env_remove("FHIRSYNTH_CLIENT_SECRET").env_remove("RUST_LOG");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_lists_subcommands_and_exit_codes() {
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for sub in [
        "seed-data",
        "to-fhir",
        "upload",
        "download",
        "to-csv",
        "synth",
        "risk",
        "serve",
        "demo",
    ] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(text.contains("4 network"));
}

#[test]
fn usage_errors_exit_2() {
    let o = bin().args(["seed-data", "--rows", "many"]).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn zero_rows_gives_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["seed-data", "--rows", "0", "--out", "e.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("e.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 35);
}

#[test]
fn csv_to_fhir_and_back_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&run(
            d,
            &["seed-data", "--rows", "120", "--seed", "5", "--out", "s.csv"]
        )),
        0
    );
    assert_eq!(code(&run(d, &["to-fhir", "--input", "s.csv", "--out", "b.ndjson"])), 0);
    let bundles = std::fs::read_to_string(d.join("b.ndjson")).unwrap();
    assert_eq!(bundles.lines().count(), 120);
    for line in bundles.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["resourceType"], "Bundle");
    }
    assert_eq!(code(&run(d, &["to-csv", "--input", "b.ndjson", "--out", "r.csv"])), 0);
    assert_eq!(
        std::fs::read(d.join("s.csv")).unwrap(),
        std::fs::read(d.join("r.csv")).unwrap()
    );
}

#[test]
fn seed_output_is_reproducible() {
    let a = bin()
        .args(["seed-data", "--rows", "50", "--seed", "9"])
        .output()
        .unwrap();
    let b = bin()
        .args(["seed-data", "--rows", "50", "--seed", "9"])
        .output()
        .unwrap();
    assert_eq!(a.stdout, b.stdout);
    let c = bin()
        .args(["seed-data", "--rows", "50", "--seed", "10"])
        .output()
        .unwrap();
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn malformed_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.ndjson"), "not json\n").unwrap();
    let o = run(dir.path(), &["to-csv", "--input", "x.ndjson"]);
    assert_eq!(code(&o), 3);
    let err = stderr(&o);
    assert!(err.starts_with("error[input] x.ndjson line 1"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);

    let o = run(dir.path(), &["to-fhir", "--input", "missing.csv", "--out", "b.ndjson"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn unreachable_server_exits_4_and_keeps_the_id_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(d, &["seed-data", "--rows", "3", "--out", "s.csv"])), 0);
    assert_eq!(code(&run(d, &["to-fhir", "--input", "s.csv", "--out", "b.ndjson"])), 0);
    // Port 9 on loopback has no listener.
    let o = run(
        d,
        &[
            "upload",
            "--input",
            "b.ndjson",
            "--url",
            "http://127.0.0.1:9",
            "--client-id",
            "a",
            "--client-secret",
            "b",
            "--id-map",
            "ids.json",
        ],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[network]"));
    let ids: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("ids.json")).unwrap()).unwrap();
    assert!(ids.is_object());
}

#[test]
fn missing_credentials_are_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["download", "--out", "d.ndjson"]);
    assert_eq!(code(&o), 3);
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts `serve fhir` on a free port; returns the process, base URL and
/// app credentials.
fn start_server(dir: &Path) -> (Server, String, String, String) {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = bin()
        .current_dir(dir)
        .args(["serve", "fhir", "--port", &port.to_string(), "--app", "cli-test"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let creds: serde_json::Value = serde_json::from_str(&line).unwrap();
    let mut ready = String::new();
    BufReader::new(child.stderr.take().unwrap())
        .read_line(&mut ready)
        .unwrap();
    assert!(ready.contains("listening"), "{ready}");
    (
        Server(child),
        format!("http://127.0.0.1:{port}"),
        creds["clientId"].as_str().unwrap().to_string(),
        creds["clientSecret"].as_str().unwrap().to_string(),
    )
}

#[test]
fn upload_and_download_through_a_served_instance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_server, url, id, secret) = start_server(d);
    assert_eq!(
        code(&run(d, &["seed-data", "--rows", "15", "--seed", "2", "--out", "s.csv"])),
        0
    );
    assert_eq!(code(&run(d, &["to-fhir", "--input", "s.csv", "--out", "b.ndjson"])), 0);

    let up = bin()
        .current_dir(d)
        .args([
            "upload",
            "--input",
            "b.ndjson",
            "--url",
            &url,
            "--client-id",
            &id,
            "--id-map",
            "ids.json",
        ])
        .env("FHIRSYNTH_CLIENT_SECRET", &secret)
        .output()
        .unwrap();
    assert_eq!(code(&up), 0, "{}", stderr(&up));
    let ids: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(d.join("ids.json")).unwrap()).unwrap();
    assert!(!ids.is_empty());

    let o = run(
        d,
        &[
            "download",
            "--url",
            &url,
            "--client-id",
            &id,
            "--client-secret",
            &secret,
            "--out",
            "d.ndjson",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&run(d, &["to-csv", "--input", "d.ndjson", "--out", "r.csv"])), 0);
    let mut a: Vec<String> = std::fs::read_to_string(d.join("s.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    let mut b: Vec<String> = std::fs::read_to_string(d.join("r.csv"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);

    let o = run(
        d,
        &[
            "download",
            "--url",
            &url,
            "--client-id",
            &id,
            "--client-secret",
            "wrong",
            "--out",
            "x.ndjson",
        ],
    );
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    let o = run(
        d,
        &[
            "download",
            "--url",
            &url,
            "--client-id",
            &id,
            "--client-secret",
            &secret,
            "--patient",
            "nope",
            "--out",
            "x.ndjson",
        ],
    );
    assert_eq!(code(&o), 6, "{}", stderr(&o));
}

#[test]
fn synth_and_risk_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&run(
            d,
            &["seed-data", "--rows", "1000", "--seed", "3", "--out", "s.csv"]
        )),
        0
    );
    let o = run(d, &["synth", "fit", "--input", "s.csv", "--out", "m.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(
        d,
        &[
            "synth", "sample", "--model", "m.json", "--rows", "400", "--out", "y.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(d.join("y.csv")).unwrap().lines().count(), 401);
    let o = run(
        d,
        &[
            "synth", "report", "--real", "s.csv", "--synth", "y.csv", "--model", "m.json", "--json", "q.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("q.json").exists());

    let o = run(
        d,
        &[
            "risk",
            "train",
            "--input",
            "s.csv",
            "--algorithm",
            "logistic",
            "--n-boot",
            "20",
            "--out",
            "r.bin",
            "--audit",
            "audit.txt",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(metrics["n"].as_u64().unwrap() > 0);
    let o = run(
        d,
        &["risk", "eval", "--model", "r.bin", "--input", "s.csv", "--n-boot", "10"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = run(d, &["risk", "predict", "--model", "r.bin", "--set", "patientGender=F"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let prob = p["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&prob));
    let o = run(d, &["risk", "predict", "--model", "r.bin", "--set", "nosuch=1"]);
    assert_eq!(code(&o), 3);
    let o = run(d, &["risk", "predict", "--model", "r.bin", "--set", "novalue"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn demo_failure_exits_7_naming_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "demo",
            "--rows",
            "300",
            "--synth-rows",
            "300",
            "--seed",
            "3",
            "--n-boot",
            "10",
            "--tv-mean-limit",
            "0",
            "--out",
            "out",
        ],
    );
    assert_eq!(code(&o), 7, "{}", stderr(&o));
    assert!(stderr(&o).contains("`synth`"), "{}", stderr(&o));
}
