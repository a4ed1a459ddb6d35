use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest parse error: {0}")]
    ManifestParse(#[from] serde_json::Error),

    #[error("invalid manifest: video `{video}`, field `{field}`: {reason}")]
    InvalidVideo {
        video: String,
        field: &'static str,
        reason: String,
    },

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("feature file {path}: {reason}")]
    FeatureFormat { path: PathBuf, reason: String },

    #[error("checkpoint {path}: {reason}")]
    CheckpointFormat { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed interval [{start}, {end}]")]
    MalformedInterval { start: f64, end: f64 },

    #[error("detection references unknown {kind} `{name}`")]
    UnknownReference { kind: &'static str, name: String },

    #[error("detection file: {0}")]
    DetectionFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
