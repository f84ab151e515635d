use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad arguments or inconsistent inputs.
    pub const USAGE: i32 = 1;
    pub const HYPOTHESIS: i32 = 2;
    pub const SOLVER: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Container(#[from] ContainerError),

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] cdii_core::error::Error),

    #[error("{0}")]
    Usage(String),

    /// Some gating hypothesis failed; the report has already been printed.
    #[error("hypothesis check failed: {0}")]
    HypothesisFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Container(_) | CliError::Csv(_) => exit::IO,
            CliError::HypothesisFailed(_) => exit::HYPOTHESIS,
            CliError::Core(e) if e.is_hypothesis_failure() => exit::HYPOTHESIS,
            CliError::Core(e) if e.is_solver_failure() => exit::SOLVER,
            CliError::Core(_) | CliError::Usage(_) => exit::USAGE,
        }
    }
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),

    #[error("not a field container: {0}")]
    Malformed(String),

    #[error("unsupported container version '{found}', this build reads v{supported}")]
    Version { found: String, supported: u32 },

    #[error("payload is {found}-endian; only little-endian payloads are supported")]
    Endianness { found: String },

    #[error("payload truncated in field '{field}': needs bytes up to {needed}, payload has {available}")]
    Truncated { field: String, needed: usize, available: usize },

    #[error("field '{field}': {reason}")]
    BadField { field: String, reason: String },

    #[error("no field named '{0}'")]
    Missing(String),
}
