use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("numeric failure: {what} (best estimate {estimate:e}, error estimate {error:e})")]
    NumericFailure { what: String, estimate: f64, error: f64 },

    #[error("incompatible states: {0}")]
    IncompatibleStates(String),

    #[error("grid resolution too coarse: max bin width {max_width:e} rad/ps, need <= {required:e} rad/ps")]
    GridResolution { max_width: f64, required: f64 },

    #[error("state of dimension {n} exceeds the dense-path limit {limit}")]
    SizeGuard { n: usize, limit: usize },

    #[error("fit failed: {0}")]
    FitFailure(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
