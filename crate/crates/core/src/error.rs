use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent design, cutoffs or study settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A basket that needs a cutoff received no calibration values.
    #[error("calibration infeasible: no posterior probabilities collected for basket {basket}")]
    CalibrationInfeasible { basket: usize },

    /// The log-posterior became NaN or infinite during sampling.
    #[error("non-finite log-posterior in {model} fit at iteration {iteration}")]
    NonFinite { model: &'static str, iteration: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
