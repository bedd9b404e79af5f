//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values (grid sizes, hyperparameters, JSON schema).
    #[error("config error: {0}")]
    Config(String),

    /// Two fields or operators that must live on the same grid do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// Non-finite data where finite values are required.
    #[error("data error: {0}")]
    Data(String),

    /// The solver state became non-finite.
    #[error("numerical divergence at time index {time_index}: {detail}")]
    Divergence { time_index: usize, detail: String },

    /// A linear solve or eigendecomposition failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A configured memory budget would be exceeded.
    #[error("resource budget exceeded: {required} bytes required, {budget} allowed")]
    Resource { required: usize, budget: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 divergence/numerical, 4 resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Divergence { .. } | Error::Numerical(_) | Error::Data(_) => 3,
            Error::Resource { .. } => 4,
            Error::GridMismatch(_) => 2,
            Error::Io(_) => 1,
        }
    }
}
