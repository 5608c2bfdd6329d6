use std::path::PathBuf;

/// Errors produced anywhere in the refinement toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid metric value {0}")]
    InvalidMetric(f64),

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("unknown action bank `{0}`")]
    UnknownBank(String),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("input shape mismatch: {0}")]
    InputShape(String),

    #[error("feature backend error: {0}")]
    Backend(String),

    #[error("model load error for {path}: {reason}")]
    ModelLoad { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("model container: {0}")]
    Container(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Refinement failed after the baseline prediction was already made.
    /// The baseline label is carried so callers can fall back to it.
    #[error("refinement failed (baseline label {baseline_label}): {source}")]
    Refinement {
        baseline_label: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("image codec error for {path}: {source}")]
    Codec {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("I/O error for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Baseline label attached to a refinement failure, if any.
    pub fn baseline_label(&self) -> Option<usize> {
        match self {
            Error::Refinement { baseline_label, .. } => Some(*baseline_label),
            _ => None,
        }
    }
}
