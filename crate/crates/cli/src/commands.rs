use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fhirsynth::adapter::{AdapterError, FhirClient, ServerCredentials};
use fhirsynth::cdss::{spawn_cdss, CdssService, FederationConfig};
use fhirsynth::demo::{run_demo, DemoOptions};
use fhirsynth::fhir::{Bundle, ParseMode};
use fhirsynth::risk::{encode_table, evaluate, run_pipeline, FeatureRecord, PreprocessConfig, RiskModel, TrainConfig};
use fhirsynth::seed;
use fhirsynth::server::{register_app, spawn, FhirServer, ServerConfig, SystemClock};
use fhirsynth::synth::{fit, quality_report, sample, GenerativeModel, SchemaHints};
use fhirsynth::table::Table;
use fhirsynth::wrangling::{csv_to_fhir, fhir_to_csv, MappingIndex};

use crate::error::{Class, CliError, CliResult};
use crate::{Cli, Command, DemoArgs, RiskCommand, ServeCommand, ServerArgs, SynthCommand};

pub async fn run(cli: Cli) -> CliResult<()> {
    let Cli {
        config, seed, command, ..
    } = cli;
    match command {
        Command::SeedData { rows, out } => {
            let t = seed::generate(rows, seed);
            write_output(out.as_deref(), &t.to_csv_string())
        }
        Command::ToFhir { input, out } => {
            let t = read_table(&input)?;
            let bundles = csv_to_fhir(&t, &MappingIndex::npr_norpd())?;
            write_bundles(&out, &bundles)?;
            eprintln!("{} rows -> {} bundles", t.n_rows(), bundles.len());
            Ok(())
        }
        Command::Upload {
            input,
            server,
            exclude,
            id_map,
        } => upload(&input, client(config.as_deref(), &server)?, exclude, id_map.as_deref()).await,
        Command::Download { server, patient, out } => {
            let c = client(config.as_deref(), &server)?;
            let bundles = match patient {
                Some(p) => vec![
                    c.download_patient_graph(p.strip_prefix("Patient/").unwrap_or(&p))
                        .await?,
                ],
                None => c.download_all().await?,
            };
            write_bundles(&out, &bundles)?;
            eprintln!("{} bundles from `{}`", bundles.len(), c.name());
            Ok(())
        }
        Command::ToCsv { input, out } => {
            let bundles = read_bundles(&input)?;
            let t = fhir_to_csv(&bundles, &MappingIndex::npr_norpd())?;
            write_output(out.as_deref(), &t.to_csv_string())
        }
        Command::Synth(cmd) => synth(cmd, seed),
        Command::Risk(cmd) => risk(cmd, seed),
        Command::Serve(ServeCommand::Fhir {
            name,
            bind,
            port,
            disable,
            strict_links,
            snapshot,
            app,
        }) => {
            let cfg = match &config {
                Some(path) => ServerConfig::load(path)?,
                None => ServerConfig {
                    bind,
                    port,
                    disabled_kinds: disable,
                    strict_links,
                    snapshot,
                    ..ServerConfig::new(name)
                },
            };
            serve_fhir(cfg, app).await
        }
        Command::Serve(ServeCommand::Cdss) => {
            let path = config.ok_or_else(|| CliError::input("serve cdss needs --config <federation.toml>"))?;
            serve_cdss(&path).await
        }
        Command::RegisterApp { name, scopes } => {
            let path = config.ok_or_else(|| CliError::input("register-app needs --config <server.toml>"))?;
            let reg = register_app(&path, &name, scopes.into_iter().collect())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&reg).expect("registration serializes")
            );
            Ok(())
        }
        Command::Demo(args) => demo(args, seed).await,
    }
}

fn read_table(path: &Path) -> CliResult<Table> {
    Table::read_csv_path(path).map_err(|e| CliError::from(e).context(path.display()))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::from(e).context(path.display()))
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => write_file(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(Class::Internal, e.to_string())),
    }
}

/// One collection bundle per line.
fn write_bundles(path: &Path, bundles: &[Bundle]) -> CliResult<()> {
    let mut text = String::new();
    for b in bundles {
        text.push_str(&b.to_json());
        text.push('\n');
    }
    write_file(path, &text)
}

fn read_bundles(path: &Path) -> CliResult<Vec<Bundle>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            Bundle::from_json(l, ParseMode::Strict)
                .map_err(|e| CliError::from(e).context(format!("{} line {}", path.display(), i + 1)))
        })
        .collect()
}

/// Credentials from the config file, overridden field by field by flags.
fn client(config: Option<&Path>, args: &ServerArgs) -> CliResult<FhirClient> {
    let mut creds = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
            toml::from_str::<ServerCredentials>(&text)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
        None => ServerCredentials::new("", "", ""),
    };
    if let Some(u) = &args.url {
        creds.base_url = u.clone();
    }
    if let Some(id) = &args.client_id {
        creds.client_id = id.clone();
    }
    if let Some(s) = &args.client_secret {
        creds.client_secret = s.clone();
    }
    if creds.base_url.is_empty() || creds.client_id.is_empty() {
        return Err(CliError::input(
            "server credentials need --url and --client-id, or a --config credentials file",
        ));
    }
    Ok(FhirClient::new(args.name.clone(), creds)?)
}

async fn upload(
    input: &Path,
    c: FhirClient,
    exclude: Vec<fhirsynth::fhir::ResourceKind>,
    id_map: Option<&Path>,
) -> CliResult<()> {
    let bundles = read_bundles(input)?;
    let exclude: BTreeSet<_> = exclude.into_iter().collect();
    match c.upload_bundles(&bundles, &exclude).await {
        Ok(map) => {
            if let Some(p) = id_map {
                write_file(p, &map.to_json())?;
            }
            eprintln!(
                "{} bundles, {} resources created on `{}`",
                bundles.len(),
                map.len(),
                c.name()
            );
            Ok(())
        }
        Err(AdapterError::PartialUpload {
            uploaded,
            failed,
            cause,
        }) => {
            if let Some(p) = id_map {
                write_file(p, &uploaded.to_json())?;
            }
            let class = CliError::from(*cause);
            Err(CliError::new(
                class.class,
                format!(
                    "upload stopped at {failed} after {} resources: {}",
                    uploaded.len(),
                    class.message
                ),
            ))
        }
        Err(e) => Err(e.into()),
    }
}

fn synth(cmd: SynthCommand, seed: u64) -> CliResult<()> {
    match cmd {
        SynthCommand::Fit { input, out } => {
            let t = read_table(&input)?;
            let hints = SchemaHints::npr_norpd().restricted_to(t.header());
            let model = fit(&t, &hints, seed)?;
            write_file(&out, &(model.to_json() + "\n"))
        }
        SynthCommand::Sample { model, rows, out } => {
            let m = GenerativeModel::load(&model).map_err(|e| CliError::from(e).context(model.display()))?;
            write_output(out.as_deref(), &sample(&m, rows, seed).to_csv_string())
        }
        SynthCommand::Report {
            real,
            synth,
            model,
            json,
        } => {
            let m = GenerativeModel::load(&model).map_err(|e| CliError::from(e).context(model.display()))?;
            let report = quality_report(&read_table(&real)?, &read_table(&synth)?, &m)?;
            if let Some(p) = json {
                write_file(&p, &report.to_json())?;
            }
            print!("{report}");
            Ok(())
        }
    }
}

fn risk(cmd: RiskCommand, seed: u64) -> CliResult<()> {
    match cmd {
        RiskCommand::Train {
            input,
            algorithm,
            out,
            metrics,
            audit,
            n_boot,
        } => {
            let t = read_table(&input)?;
            let run = run_pipeline(
                &t,
                &PreprocessConfig::default(),
                algorithm,
                &TrainConfig::default(),
                n_boot,
                seed,
            )?;
            run.model
                .save(&out)
                .map_err(|e| CliError::from(e).context(out.display()))?;
            let report = run.metrics.to_json();
            if let Some(p) = metrics {
                write_file(&p, &report)?;
            }
            if let Some(p) = audit {
                write_file(&p, &run.audit.iter().map(|a| format!("{a}\n")).collect::<String>())?;
            }
            println!("{report}");
            Ok(())
        }
        RiskCommand::Eval { model, input, n_boot } => {
            let m = load_model(&model)?;
            let data = encode_table(&m, &read_table(&input)?)?;
            println!("{}", evaluate(&m, &data, n_boot, seed)?.to_json());
            Ok(())
        }
        RiskCommand::Predict { model, set } => {
            let m = load_model(&model)?;
            let mut record = FeatureRecord::new();
            for kv in set {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| CliError::input(format!("`{kv}` is not FEATURE=VALUE")))?;
                if m.spec.feature(k).is_none() {
                    return Err(CliError::input(format!("the model has no feature `{k}`")));
                }
                record.insert(k.to_string(), v.to_string());
            }
            // Features left out take the training mode.
            for f in &m.spec.features {
                record.entry(f.name.clone()).or_default();
            }
            let p = m.predict(&record)?;
            println!("{}", serde_json::to_string_pretty(&p).expect("prediction serializes"));
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> CliResult<RiskModel> {
    RiskModel::load(path).map_err(|e| CliError::from(e).context(path.display()))
}

async fn wait_for_interrupt() -> CliResult<()> {
    tokio::signal::ctrl_c()
        .await
        .map_err(|e| CliError::new(Class::Internal, format!("signal handler: {e}")))
}

async fn serve_fhir(cfg: ServerConfig, app: Option<String>) -> CliResult<()> {
    let addr = cfg.addr()?;
    let server = FhirServer::from_config(&cfg, Arc::new(SystemClock))?;
    if let Some(name) = app {
        let reg = server.register_app(&name, BTreeSet::new())?;
        println!("{}", serde_json::to_string(&reg).expect("registration serializes"));
    }
    let running = spawn(server, addr)
        .await
        .map_err(|e| CliError::new(Class::Network, format!("cannot listen on {addr}: {e}")))?;
    eprintln!("fhir server `{}` listening on {}", cfg.name, running.base_url());
    wait_for_interrupt().await?;
    let server = running.server.clone();
    running
        .shutdown()
        .await
        .map_err(|e| CliError::new(Class::Internal, e.to_string()))?;
    if let Some(path) = &cfg.snapshot {
        server.snapshot(path)?;
        eprintln!("snapshot written to {}", path.display());
    }
    Ok(())
}

async fn serve_cdss(path: &PathBuf) -> CliResult<()> {
    let cfg = FederationConfig::load(path)?;
    let addr = cfg.addr()?;
    let service = CdssService::new(cfg)?;
    let running = spawn_cdss(service, addr)
        .await
        .map_err(|e| CliError::new(Class::Network, format!("cannot listen on {addr}: {e}")))?;
    eprintln!("cdss service listening on {}", running.base_url());
    wait_for_interrupt().await?;
    running
        .shutdown()
        .await
        .map_err(|e| CliError::new(Class::Internal, e.to_string()))
}

async fn demo(args: DemoArgs, seed: u64) -> CliResult<()> {
    let opts = DemoOptions {
        rows: args.rows,
        synth_rows: args.synth_rows,
        seed,
        out_dir: args.out,
        algorithm: args.algorithm,
        n_boot: args.n_boot,
        predict_patients: args.predict_patients,
        tv_mean_limit: args.tv_mean_limit,
        tv_max_limit: args.tv_max_limit,
    };
    let report = run_demo(&opts).await?;
    print!("{report}");
    println!("outputs in {}: {}", opts.out_dir.display(), report.files.join(", "));
    Ok(())
}
