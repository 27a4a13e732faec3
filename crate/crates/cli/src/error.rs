use std::fmt;

/// A failure carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration, unknown identity id, missing inputs. Exit 2.
    Config(String),
    /// An EXACT identity missed its threshold. Exit 1.
    Identity(String),
    /// Eigensolver, resolvent or factorization failure. Exit 3.
    Solver(String),
    /// Hash mismatch or unreadable cached artifact. Exit 4.
    Cache(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Identity(_) => 1,
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Cache(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Identity(m) => write!(f, "identity failure: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Cache(m) => write!(f, "cache corruption: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<polaron::Error> for CliError {
    fn from(e: polaron::Error) -> Self {
        use polaron::Error::*;
        let msg = e.to_string();
        match e {
            InvalidGrid(_) | CapExceeded { .. } | DimensionMismatch { .. } | UnknownSelector(_) | NotAMode { .. } | SectorOutOfRange { .. }
            | InvalidArgument(_) | EmptyProbeSet => CliError::Config(msg),
            NotConverged { .. } | Indefinite { .. } | NonPositiveC0(_) => CliError::Solver(msg),
            Format(_) => CliError::Cache(msg),
            Io(_) => CliError::Config(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
