use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("coordinate ({x}, {y}) outside sampling domain [0, {max_x}] x [0, {max_y}]")]
    Domain {
        x: f64,
        y: f64,
        max_x: f64,
        max_y: f64,
    },
    #[error("degenerate point: {0}")]
    DegeneratePoint(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("numerical instability at step {step} (dt = {dt}): {message}")]
    NumericalInstability { step: usize, dt: f64, message: String },
}

/// Coarse error classes, each mapped to a distinct process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Config,
    Degenerate,
    Numerical,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Io => 2,
            ErrorClass::Config => 3,
            ErrorClass::Degenerate => 4,
            ErrorClass::Numerical => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Io => "io",
            ErrorClass::Config => "config",
            ErrorClass::Degenerate => "degenerate",
            ErrorClass::Numerical => "numerical",
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Format { .. } => ErrorClass::Io,
            Error::Config(_) | Error::Invariant(_) | Error::Domain { .. } => ErrorClass::Config,
            Error::DegeneratePoint(_)
            | Error::DegenerateConfiguration(_)
            | Error::InsufficientData(_) => ErrorClass::Degenerate,
            Error::NumericalInstability { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
