use std::fmt;

use fhirsynth::adapter::AdapterError;
use fhirsynth::cdss::CdssError;
use fhirsynth::demo::DemoError;
use fhirsynth::fhir::FhirError;
use fhirsynth::risk::RiskError;
use fhirsynth::server::ServerError;
use fhirsynth::synth::SynthError;
use fhirsynth::table::TableError;
use fhirsynth::wrangling::WranglingError;

/// Failure classes and their exit codes. Usage errors exit with 2 from the
/// argument parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Internal,
    Input,
    Network,
    Auth,
    NotFound,
    Invariant,
}

impl Class {
    pub fn exit_code(self) -> u8 {
        match self {
            Class::Internal => 1,
            Class::Input => 3,
            Class::Network => 4,
            Class::Auth => 5,
            Class::NotFound => 6,
            Class::Invariant => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Internal => "internal",
            Class::Input => "input",
            Class::Network => "network",
            Class::Auth => "auth",
            Class::NotFound => "not-found",
            Class::Invariant => "invariant",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub message: String,
}

impl CliError {
    pub fn new(class: Class, message: impl Into<String>) -> CliError {
        CliError {
            class,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> CliError {
        CliError::new(Class::Input, message)
    }

    /// Prefixes the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> CliError {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

/// `error[<class>] <message>` on one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        write!(f, "error[{}] {one_line}", self.class.as_str())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn adapter_class(e: &AdapterError) -> Class {
    match e {
        AdapterError::Network { .. } | AdapterError::Http { .. } | AdapterError::BadResponse { .. } => Class::Network,
        AdapterError::DanglingOnServer { .. } => Class::Invariant,
        AdapterError::Auth { .. } => Class::Auth,
        AdapterError::NotFound { .. } => Class::NotFound,
        AdapterError::PartialUpload { cause, .. } | AdapterError::Fetch { cause, .. } => adapter_class(cause),
        AdapterError::BadUrl(_)
        | AdapterError::InvalidBundle(_)
        | AdapterError::OrderViolation { .. }
        | AdapterError::ExcludedTarget { .. } => Class::Input,
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> CliError {
        CliError::new(adapter_class(&e), e.to_string())
    }
}

impl From<CdssError> for CliError {
    fn from(e: CdssError) -> CliError {
        let class = match &e {
            CdssError::UnknownPatient(_) => Class::NotFound,
            CdssError::Upstream { .. } => Class::Network,
            CdssError::ModelUnavailable | CdssError::NoEncounter { .. } => Class::Invariant,
            _ => Class::Input,
        };
        CliError::new(class, e.to_string())
    }
}

impl From<DemoError> for CliError {
    fn from(e: DemoError) -> CliError {
        CliError::new(Class::Invariant, e.to_string())
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> CliError {
        CliError::input(e.to_string())
    }
}

macro_rules! input_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> CliError {
                CliError::input(e.to_string())
            }
        }
    )*};
}

input_errors!(FhirError, RiskError, SynthError, TableError, WranglingError);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::new(Class::Input, e.to_string())
    }
}
