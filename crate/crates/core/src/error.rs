use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// Every candidate subproblem of a greedy step failed. `partial` holds
    /// the run up to the failing iteration, when one exists.
    #[error("greedy failure at iteration {iteration}: {reason}")]
    GreedyFailure {
        iteration: usize,
        reason: String,
        partial: Option<Box<crate::greedy::GreedyRun>>,
    },

    /// The objective oracle failed at the start point `x` of a local search.
    #[error("objective failed at the start point: {source}")]
    OracleFailure { x: Vec<f64>, source: Box<Error> },

    #[error("invalid artifact: {0}")]
    InvalidArtifact(String),

    /// Configuration problems, one message per offending field.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
