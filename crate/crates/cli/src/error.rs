use std::path::Path;

use noisyir::corpus::CorpusError;
use noisyir::drift::DriftError;
use noisyir::metrics::MetricsError;
use noisyir::pooling::PoolingError;
use noisyir::relevance::RelevanceError;
use noisyir::report::ReportError;
use noisyir::retrieval::RetrievalError;
use noisyir::sampling::SamplingError;
use noisyir::significance::SignificanceError;
use noisyir::synthetic::SyntheticError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Integrity(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Input(_) => 3,
            Self::Integrity(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Input(_) => "input",
            Self::Integrity(_) => "integrity",
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Input(format!("{}: {e}", path.display()))
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

macro_rules! input_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Input(e.to_string())
            }
        })*
    };
}

input_errors!(
    CorpusError,
    DriftError,
    MetricsError,
    PoolingError,
    RelevanceError,
    ReportError,
    RetrievalError,
    SamplingError,
    SignificanceError,
    SyntheticError,
    serde_json::Error,
    csv::Error
);

pub type Result<T> = std::result::Result<T, CliError>;
