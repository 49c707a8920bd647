use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {operand}: expected {expected}, got {got}")]
    Shape {
        operand: String,
        expected: String,
        got: String,
    },

    #[error("attention window is empty")]
    EmptyWindow,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("non-finite loss after perturbing parameter {parameter}")]
    NonFiniteLoss { parameter: String },

    #[error("empty utterance{}", .0.as_deref().map(|id| format!(" `{id}`")).unwrap_or_default())]
    EmptyUtterance(Option<String>),

    #[error("word `{0}` is not in the lexicon")]
    UnknownWord(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid alignment in utterance `{utterance}`: {message}")]
    Alignment { utterance: String, message: String },

    #[error(
        "utterance `{utterance}`: block {block} needs {count} labels, above the cap of {cap}"
    )]
    CapExceeded {
        utterance: String,
        block: usize,
        count: usize,
        cap: usize,
    },

    #[error("exhaustive search would enumerate {count} sequences (limit {limit})")]
    EnumerationBound { count: u128, limit: u128 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("language model error: {0}")]
    LanguageModel(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        operand: impl Into<String>,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            operand: operand.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Whether the error stems from bad input or configuration rather than
    /// a failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::File { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Io(_) | Error::NonFiniteLoss { .. } => false,
            _ => true,
        }
    }
}

/// Reads a whole input file, naming it in the error.
pub(crate) fn read_input(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_input_string(path: &std::path::Path) -> Result<String> {
    String::from_utf8(read_input(path)?).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}
