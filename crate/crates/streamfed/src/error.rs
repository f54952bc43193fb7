//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty cache")]
    EmptyCache,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: u64, residual: f64 },

    #[error("series of length {len} too short for max lag {tau_max}")]
    SeriesTooShort { len: usize, tau_max: usize },

    #[error("degenerate stream: empirical autocovariance is zero at every lag")]
    DegenerateStream,

    #[error("infeasible targets: {0}")]
    InfeasibleTargets(String),

    #[error("non-finite value in {context} at step {step}")]
    NonFinite { context: &'static str, step: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("client {client}: {source}")]
    Client {
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps an error with the client index it occurred on.
    pub fn for_client(client: usize, source: Error) -> Self {
        Error::Client {
            client,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
