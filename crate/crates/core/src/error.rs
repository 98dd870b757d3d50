use std::path::PathBuf;

use crate::matching::Category;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("corrupt RLE: {0}")]
    CorruptRle(String),

    #[error("mask dimensions differ: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("mask is empty")]
    EmptyMask,

    #[error("cluster has {0} member(s); at least 2 are required")]
    SingletonCluster(usize),

    #[error("degenerate cluster: {0}")]
    DegenerateCluster(String),

    #[error("mask criteria undefined: {0}")]
    MaskDegenerate(String),

    #[error("distributions live on different grids ({0} vs {1} points)")]
    GridMismatch(usize, usize),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("zero variance; correlation undefined")]
    ZeroVariance,

    #[error("training requires at least 2 distinct classes, found {0}")]
    InsufficientClasses(usize),

    #[error("classes without rows: {0:?}")]
    EmptyClasses(Vec<Category>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in column {column} of row {row}")]
    NonFinite { row: usize, column: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn json(path: impl Into<PathBuf>, e: serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (files, flags, config)
    /// rather than by an internal failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::CorruptRle(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidConfig(_)
                | Error::NonFinite { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::EmptyClasses(_)
                | Error::InsufficientClasses(_)
        )
    }
}
