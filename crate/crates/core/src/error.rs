use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the model.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {message}")]
    Parse { what: &'static str, message: String },
    #[error("unsupported schema version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("node `{node}` references undeclared tensor `{tensor}`")]
    DanglingTensor { node: String, tensor: String },
    #[error("node `{node}` consumes `{tensor}` before it is produced")]
    NotTopological { node: String, tensor: String },
    #[error("tensor `{tensor}` is produced more than once")]
    DuplicateProducer { tensor: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid machine configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("no feasible microkernel: {0}")]
    InfeasibleTiling(String),
    #[error("emulator fault: {0}")]
    Emulation(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown technology node `{0}`")]
    UnknownNode(String),
    #[error("frequency {0} Hz outside the voltage curve")]
    FrequencyOutOfRange(f64),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

/// Broad classes used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    InfeasibleConfig,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::InvalidConfig(_)
            | Error::UnknownPreset(_)
            | Error::InfeasibleTiling(_)
            | Error::FrequencyOutOfRange(_)
            | Error::UnknownNode(_) => ErrorClass::InfeasibleConfig,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
