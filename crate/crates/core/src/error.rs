use std::path::PathBuf;

/// Errors produced across the refinement toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("region {region} exceeds raster bounds {width}x{height}")]
    Bounds {
        region: String,
        width: usize,
        height: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed raster file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("predictor server reported: {0}")]
    Remote(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("cycle {cycle} of repeat {repeat}, fold {fold} failed: {source}")]
    Cycle {
        repeat: usize,
        fold: usize,
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
