//! File formats, experiment suites and the report schema behind the
//! `confdim` command-line tool.

pub mod brownian_suite;
pub mod carpet_suite;
pub mod config;
pub mod io;
pub mod plots;
pub mod pool;
pub mod report;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{context}")]
    Carpet { context: String, source: confdim::error::CarpetError },
    #[error("{context}")]
    Measure { context: String, source: confdim::error::MeasureError },
    #[error("{context}")]
    Modulus { context: String, source: confdim::error::ModulusError },
    #[error("{context}")]
    Geometry { context: String, source: confdim::error::GeometryError },
    #[error("{context}")]
    Brownian { context: String, source: confdim::error::BrownianError },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io { path: path.display().to_string(), source }
    }
}

impl From<confdim::error::CarpetError> for LabError {
    fn from(source: confdim::error::CarpetError) -> Self {
        LabError::Carpet { context: "carpet".into(), source }
    }
}

/// Attaches a context string to core errors.
pub(crate) trait Context<T> {
    fn context(self, what: impl Into<String>) -> Result<T, LabError>;
}

macro_rules! context_impl {
    ($err:ty, $variant:ident) => {
        impl<T> Context<T> for Result<T, $err> {
            fn context(self, what: impl Into<String>) -> Result<T, LabError> {
                self.map_err(|source| LabError::$variant { context: what.into(), source })
            }
        }
    };
}

context_impl!(confdim::error::CarpetError, Carpet);
context_impl!(confdim::error::MeasureError, Measure);
context_impl!(confdim::error::ModulusError, Modulus);
context_impl!(confdim::error::GeometryError, Geometry);
context_impl!(confdim::error::BrownianError, Brownian);
