use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis capacity exceeded along {axis}-axis: requested {requested} modes, grid resolves {available}")]
    Capacity {
        axis: char,
        requested: usize,
        available: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: String, found: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("time nodes must be strictly increasing and start at 0: {0}")]
    Ordering(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("positivity violated: u = {u}, v = {v}")]
    Positivity { u: f64, v: f64 },

    #[error("non-finite state at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("Picard iteration is not contracting (eta_{k} = {eta_k:e} > 10 * eta_1 = {eta_1:e}); try a smaller horizon T0")]
    ContractionFailure { k: usize, eta_k: f64, eta_1: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(expected: impl ToString, found: impl ToString) -> Error {
    Error::Dimension {
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
