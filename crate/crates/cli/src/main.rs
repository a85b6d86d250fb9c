//! `fhirsynth`: the whole workflow from the shell. Each subcommand wraps one
//! library operation; failures print one `error[<class>] <message>` line
//! to stderr and exit with the class's code.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fhirsynth::fhir::ResourceKind;
use fhirsynth::risk::Algorithm;

#[derive(Parser, Debug)]
#[command(
    name = "fhirsynth",
    version,
    about = "Tabular health data to FHIR and back, synthetic data, risk models"
)]
#[command(after_help = "Exit codes: 0 ok, 1 internal, 2 usage, 3 input, 4 network, 5 auth, 6 not found, 7 invariant.")]
pub struct Cli {
    /// Config file: server TOML for `serve fhir` and `register-app`,
    /// federation TOML for `serve cdss`, credentials TOML for `upload`
    /// and `download`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    /// More log output on stderr; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seed CSV in the 35-column dataset layout.
    SeedData {
        /// Number of rows.
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a CSV to bundles, one per row, written as NDJSON.
    ToFhir {
        /// Input CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output NDJSON bundle file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Upload NDJSON bundles to a FHIR server.
    Upload {
        /// NDJSON bundle file.
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        server: ServerArgs,
        /// Kinds to leave out, comma separated.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<ResourceKind>,
        /// Where to write the local-to-server id map, also on failure.
        #[arg(long)]
        id_map: Option<PathBuf>,
    },
    /// Download bundles from a FHIR server as NDJSON: every admission, or
    /// one patient's linked resources.
    Download {
        #[command(flatten)]
        server: ServerArgs,
        /// Patient id, bare or as `Patient/<id>`.
        #[arg(long)]
        patient: Option<String>,
        /// Output NDJSON bundle file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Flatten NDJSON bundles back to a CSV.
    ToCsv {
        /// NDJSON bundle file.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic data generator.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Hospitalization risk model.
    #[command(subcommand)]
    Risk(RiskCommand),
    /// Run a server until interrupted.
    #[command(subcommand)]
    Serve(ServeCommand),
    /// Register an app in a server config file; prints its credentials.
    RegisterApp {
        /// App name.
        #[arg(long)]
        name: String,
        /// Scopes, comma separated; recorded, not enforced.
        #[arg(long, value_delimiter = ',')]
        scopes: Vec<String>,
    },
    /// Run the whole workflow against in-process servers.
    Demo(DemoArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ServerArgs {
    /// Server base URL; overrides the config file.
    #[arg(long)]
    pub url: Option<String>,
    /// Client id; overrides the config file.
    #[arg(long)]
    pub client_id: Option<String>,
    /// Client secret; overrides the config file.
    #[arg(long, env = "FHIRSYNTH_CLIENT_SECRET", hide_env_values = true)]
    pub client_secret: Option<String>,
    /// Name used in error messages.
    #[arg(long, default_value = "server")]
    pub name: String,
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Fit the generator to a CSV.
    Fit {
        /// Training CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output model JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw rows from a fitted generator.
    Sample {
        /// Model JSON from `synth fit`.
        #[arg(long)]
        model: PathBuf,
        /// Number of rows to draw.
        #[arg(long)]
        rows: usize,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare real and synthetic tables.
    Report {
        /// Training CSV.
        #[arg(long)]
        real: PathBuf,
        /// Sampled CSV.
        #[arg(long)]
        synth: PathBuf,
        /// Model JSON both tables were used with.
        #[arg(long)]
        model: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum RiskCommand {
    /// Preprocess, split 80/20, train, evaluate on the held-out rows.
    Train {
        /// Training CSV.
        #[arg(long)]
        input: PathBuf,
        /// `logistic`, `gbtree` or `rf`.
        #[arg(long, default_value = "gbtree")]
        algorithm: Algorithm,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the test metrics as JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Also write the preprocessing audit log.
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Bootstrap resamples for the intervals.
        #[arg(long, default_value_t = 1000)]
        n_boot: usize,
    },
    /// Score a trained model on a CSV.
    Eval {
        /// Model file from `risk train`.
        #[arg(long)]
        model: PathBuf,
        /// CSV in the dataset layout.
        #[arg(long)]
        input: PathBuf,
        /// Bootstrap resamples for the intervals.
        #[arg(long, default_value_t = 1000)]
        n_boot: usize,
    },
    /// Score one record given as `feature=value` pairs.
    Predict {
        /// Model file from `risk train`.
        #[arg(long)]
        model: PathBuf,
        /// One feature value; repeatable. Missing features take the
        /// training mode.
        #[arg(long = "set", value_name = "FEATURE=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum ServeCommand {
    /// Mock FHIR server. With --config the file supplies everything;
    /// otherwise the flags do and `--app` registers an app in memory.
    Fhir {
        /// Server name, used in logs and error messages.
        #[arg(long, default_value = "fhir")]
        name: String,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8081)]
        port: u16,
        /// Kinds answered with 404, comma separated.
        #[arg(long, value_delimiter = ',')]
        disable: Vec<ResourceKind>,
        /// Reject creates whose references point at nothing stored.
        #[arg(long)]
        strict_links: bool,
        /// Restored at start when present, written on Ctrl-C.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Register an app with this name and print its credentials.
        #[arg(long)]
        app: Option<String>,
    },
    /// Decision-support service; needs --config.
    Cdss,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    /// Seed table rows.
    #[arg(long, default_value_t = 5000)]
    pub rows: usize,
    /// Synthetic rows to draw.
    #[arg(long, default_value_t = 10000)]
    pub synth_rows: usize,
    /// Directory for every output file.
    #[arg(long, default_value = "demo-out")]
    pub out: PathBuf,
    /// `logistic`, `gbtree` or `rf`.
    #[arg(long, default_value = "gbtree")]
    pub algorithm: Algorithm,
    /// Bootstrap resamples for the intervals.
    #[arg(long, default_value_t = 1000)]
    pub n_boot: usize,
    /// Patients scored through the decision-support service.
    #[arg(long, default_value_t = 5)]
    pub predict_patients: usize,
    /// Fail when the mean column TV distance exceeds this.
    #[arg(long, default_value_t = fhirsynth::demo::TV_MEAN_LIMIT)]
    pub tv_mean_limit: f64,
    /// Fail when any column TV distance exceeds this.
    #[arg(long, default_value_t = fhirsynth::demo::TV_MAX_LIMIT)]
    pub tv_max_limit: f64,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error[internal] cannot start the runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.class.exit_code())
        }
    }
}
