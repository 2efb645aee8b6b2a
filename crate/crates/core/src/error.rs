use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("duplicate shot id {0}")]
    DuplicateShot(u64),

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("training data: {0}")]
    Training(String),

    #[error("shot {id} is outside the raster extent")]
    OffRaster { id: u64 },

    #[error("no view-angle entry for beam {beam} on {date}")]
    MissingBeamDay { beam: u8, date: String },

    #[error("shot {0} has not been classified")]
    Unclassified(u64),

    #[error("rasters are not aligned: {0}")]
    Misaligned(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Invalid(_) => "invalid",
            Error::MissingColumn(_) => "missing_column",
            Error::DuplicateShot(_) => "duplicate_shot",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::ModelFormat(_) => "model_format",
            Error::Dimension { .. } => "dimension",
            Error::Training(_) => "training",
            Error::OffRaster { .. } => "off_raster",
            Error::MissingBeamDay { .. } => "missing_beam_day",
            Error::Unclassified(_) => "unclassified",
            Error::Misaligned(_) => "misaligned",
            Error::Undefined(_) => "undefined",
            Error::Config(_) => "config",
        }
    }
}
