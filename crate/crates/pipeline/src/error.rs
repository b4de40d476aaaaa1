use std::path::PathBuf;

use bikedepth_core::baseline::BaselineError;
use bikedepth_core::detect::DetectError;
use bikedepth_core::ingest::IngestError;
use bikedepth_core::severity::SeverityError;
use bikedepth_core::spatial::SpatialError;
use thiserror::Error;

/// Failure of a pipeline stage, classified for the process exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache error: {0}")]
    Cache(String),
}

impl PipelineError {
    pub const EXIT_CONFIG: u8 = 2;
    pub const EXIT_DATA: u8 = 3;
    pub const EXIT_NUMERIC: u8 = 4;

    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) => Self::EXIT_CONFIG,
            PipelineError::Data(_) => Self::EXIT_DATA,
            PipelineError::Numeric(_) => Self::EXIT_NUMERIC,
            PipelineError::Io { .. } | PipelineError::Cache(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Data(_) => "data",
            PipelineError::Numeric(_) => "numeric",
            PipelineError::Io { .. } => "io",
            PipelineError::Cache(_) => "cache",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }

    /// Prefixes the message with the file it concerns.
    pub fn context(self, path: &std::path::Path) -> Self {
        let at = |m: String| format!("{}: {m}", path.display());
        match self {
            PipelineError::Config(m) => PipelineError::Config(at(m)),
            PipelineError::Data(m) => PipelineError::Data(at(m)),
            PipelineError::Numeric(m) => PipelineError::Numeric(at(m)),
            other => other,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

impl From<IngestError> for PipelineError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::MissingColumn(_) | IngestError::InvalidDateRange { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<BaselineError> for PipelineError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::Numerical(_) => PipelineError::Numeric(e.to_string()),
            BaselineError::InvalidArgument(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<DetectError> for PipelineError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::InvalidConfig(_) => PipelineError::Config(e.to_string()),
            DetectError::PoolTooSmall { .. } | DetectError::AllZeroPool => PipelineError::Data(e.to_string()),
            _ => PipelineError::Numeric(e.to_string()),
        }
    }
}

impl From<SpatialError> for PipelineError {
    fn from(e: SpatialError) -> Self {
        match e {
            SpatialError::InvalidParameter(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<SeverityError> for PipelineError {
    fn from(e: SeverityError) -> Self {
        match e {
            SeverityError::InvalidBins(_) | SeverityError::MissingColumn(_) => PipelineError::Config(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Data(e.to_string())
    }
}
