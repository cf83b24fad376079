use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {space} label index {index}")]
    InvalidLabel { space: &'static str, index: usize },

    #[error("label scheme validation failed: {0}")]
    Scheme(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no models supplied for the {0} stage")]
    NoModels(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("stream alignment mismatch: expected {expected} frames, offending {}", format_offenders(.offenders))]
    Alignment {
        expected: usize,
        offenders: Vec<(String, usize)>,
    },

    #[error("negative scores required but unavailable: {0}")]
    MissingNegativeScores(String),

    #[error("{}:{line}: {message}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("frame indices not contiguous: expected {expected}, found {found}")]
    Contiguity { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid prediction {value} at position {position}")]
    InvalidPrediction { value: i32, position: usize },

    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),

    #[error("repeat factor undefined for class {class}: frequency is zero")]
    UndefinedFactor { class: usize },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_offenders(offenders: &[(String, usize)]) -> String {
    offenders
        .iter()
        .map(|(model, n)| format!("({model}, {n})"))
        .collect::<Vec<_>>()
        .join(", ")
}
