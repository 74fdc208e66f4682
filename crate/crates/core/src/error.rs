use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("cannot split {classes} classes into {tasks} equal tasks")]
    IndivisibleSplit { classes: usize, tasks: usize },

    #[error("split has {available} classes but the batch needs {required}")]
    InsufficientClasses { available: usize, required: usize },

    #[error("invalid batch spec: {0}")]
    InvalidBatchSpec(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("class {0} is already known to the classifier")]
    DuplicateClass(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("anchor {0} has no positive in the batch")]
    NoPositive(usize),

    #[error("anchor {0} has no negative in the batch")]
    NoNegative(usize),

    #[error("a teacher snapshot is required after the first task")]
    MissingTeacher,

    #[error("a teacher snapshot was supplied for the first task")]
    UnexpectedTeacher,

    #[error("non-finite loss at stage {stage}, epoch {epoch}, step {step}: {dump}")]
    NonFiniteLoss {
        stage: usize,
        epoch: usize,
        step: usize,
        dump: String,
    },

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("gallery row {0} is a zero vector; cosine distance is undefined")]
    ZeroVector(usize),

    #[error("query vector is zero; cosine distance is undefined")]
    ZeroQuery,

    #[error("k = {k} exceeds the {available} gallery entries available")]
    KTooLarge { k: usize, available: usize },

    #[error("every class in the split is a singleton; no query can be answered")]
    DegenerateSplit,

    #[error("records do not share the same checkpoint structure: {0}")]
    InconsistentCheckpoints(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("output directory {0} already holds a different run; pass --overwrite")]
    OutputExists(PathBuf),

    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::IndivisibleSplit { .. }
                | Error::InsufficientClasses { .. }
                | Error::InvalidBatchSpec(_)
                | Error::EmptyDataset
                | Error::OutputExists(_)
                | Error::Parse { .. }
        )
    }
}
