use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("graph was not recorded; backward needs a recording graph")]
    NotRecorded,

    #[error("root does not depend on a recorded backward pass")]
    FirstPassNotRecorded,

    #[error("variable {0} is not a differentiable input of this graph")]
    NotAnInput(usize),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("gradient layout mismatch")]
    LayoutMismatch,

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{what}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{what}: file truncated")]
    Truncated { what: &'static str },

    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error("dataset needs at least 2 classes, found {0}")]
    TooFewClasses(usize),

    #[error("label {label}: needed {needed} unused samples, only {available} left")]
    InsufficientSamples {
        label: usize,
        needed: usize,
        available: usize,
    },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite matching gradient at inner iteration {iteration}")]
    InnerNonFinite { iteration: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("round {round}{}: {source}", client.map(|c| format!(", client {c}")).unwrap_or_default())]
    Training {
        round: usize,
        client: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_round(self, round: usize, client: Option<usize>) -> Self {
        Error::Training {
            round,
            client,
            source: Box::new(self),
        }
    }

    /// Coarse category used for process exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. }
            | Error::NotScalar(_)
            | Error::NotRecorded
            | Error::FirstPassNotRecorded
            | Error::NotAnInput(_)
            | Error::Unsupported(_)
            | Error::LayoutMismatch => "program",
            Error::NonFinite { .. } | Error::InnerNonFinite { .. } => "numeric",
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::CountMismatch { .. }
            | Error::Truncated { .. }
            | Error::Csv { .. }
            | Error::Checkpoint(_) => "data",
            Error::InvalidSpec(_)
            | Error::LabelOutOfRange { .. }
            | Error::TooFewClasses(_)
            | Error::InsufficientSamples { .. }
            | Error::TooFewSamples { .. }
            | Error::EmptyBatch
            | Error::Config(_) => "input",
            Error::Training { source, .. } => source.category(),
        }
    }
}
