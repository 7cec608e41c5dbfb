use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// `coordinate` is 1-based.
    #[error("invalid marginal for coordinate {coordinate}: {reason}")]
    Marginal { coordinate: usize, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The model failed (or returned a non-finite value) on one design row.
    #[error("model evaluation failed on row {row} at {coords:?}: {reason}")]
    ModelEvaluation {
        row: usize,
        coords: Vec<f64>,
        reason: String,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error("zero output variance")]
    ZeroVariance,

    #[error("perturbation collapsed output variance estimate")]
    CollapsedVariance,

    #[error("index insensitive to all marginal perturbations")]
    Insensitive,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Process exit status used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ModelEvaluation { .. } | Error::Model(_) => 3,
            Error::ZeroVariance | Error::CollapsedVariance | Error::Insensitive | Error::Singular(_) => 4,
            _ => 2,
        }
    }
}
