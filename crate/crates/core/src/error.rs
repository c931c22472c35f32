use thiserror::Error;

/// Errors raised by the estimation, denoising and simulation routines.
#[derive(Debug, Error)]
pub enum NpmleError {
    /// A caller broke an operation's precondition (mismatched dimensions,
    /// empty inputs, out-of-range arguments).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (bad solver knobs, non-SPD covariance, grid too large).
    #[error("configuration error: {0}")]
    Config(String),

    /// The observation at `index` has zero fitted density on the given support.
    #[error("numerical error: fitted density of observation {index} underflowed ({detail})")]
    Underflow { index: usize, detail: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Malformed input data (CSV cell, JSON model).
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NpmleError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        NpmleError::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        NpmleError::Config(msg.into())
    }

    /// True for failures of the numerical routines themselves, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, NpmleError::Underflow { .. } | NpmleError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, NpmleError>;
