use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator, the analysis routines and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("missing column `{column}` in {}", .path.display())]
    MissingColumn { path: PathBuf, column: String },

    #[error("no usable rows in {} after dropping incomplete records", .0.display())]
    NoUsableRows(PathBuf),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("cannot parse configuration: {0}")]
    ConfigParse(String),

    #[error("no steady state: spectral radius {0:.6} is not below one")]
    NoSteadyState(f64),

    #[error("linear solver stalled at relative residual {0:.3e}")]
    SolverStalled(f64),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::FileNotFound(_) => "file-not-found",
            Error::MissingColumn { .. } => "missing-column",
            Error::NoUsableRows(_) => "no-usable-rows",
            Error::InvalidConfig(_) => "invalid-config",
            Error::ConfigParse(_) => "config-parse",
            Error::NoSteadyState(_) => "no-steady-state",
            Error::SolverStalled(_) => "solver-stalled",
            Error::Csv(_) => "csv",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
