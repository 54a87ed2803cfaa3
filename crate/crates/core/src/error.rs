use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset: no row has a complete lag window")]
    EmptyDataset,

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("matrix decomposition failed: {0}")]
    Decomposition(String),

    #[error("covariate matrix is rank deficient; offending columns: {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures that stem from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical { .. } | Error::Decomposition(_) | Error::Constraint(_)
        )
    }
}
