use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants fall into three families that the command line maps onto exit
/// codes: usage/config problems, data problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: malformed record: {msg}")]
    Malformed {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("dangling reference: {kind} \"{id}\" does not exist")]
    DanglingRef { kind: &'static str, id: String },

    #[error("duplicate {kind} id \"{id}\"")]
    Duplicate { kind: &'static str, id: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("feature dimension mismatch: {0}")]
    FeatureDim(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("zero-norm row {row} under cosine distance")]
    ZeroNorm { row: usize },

    #[error("batch needs at least two identities, found {0}")]
    SingleIdentity(usize),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("not enough identities: need {needed}, have {available}")]
    NotEnoughIdentities { needed: usize, available: usize },

    #[error("no relevant gallery item for query {0}")]
    NoRelevant(String),

    #[error("missing embedding for sample {0}")]
    MissingEmbedding(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by NaN/inf during numeric work.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }

    /// True for configuration problems, as opposed to bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
