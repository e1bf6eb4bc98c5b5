use alloc::string::String;

use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Bad parameter vector or dimension mismatch.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// A body model failed validation; names the offending field.
    #[error("invalid model field `{field}`: {reason}")]
    Model { field: String, reason: String },
    /// Missing or incompatible configuration (no UVs, missing calibration pairs, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// Input data that cannot be used (non-finite pixels, bad resolution).
    #[error("input error: {0}")]
    Input(String),
    /// Landmark fit could not start.
    #[error("fit error: {0}")]
    Fit(String),
    #[error("attachment error: {0}")]
    Attachment(String),
    /// A guidance oracle call failed.
    #[error("oracle error during {stage}: {source}")]
    Oracle {
        stage: String,
        #[source]
        source: OracleError,
    },
    /// Loss or gradient became NaN/inf.
    #[error("numeric failure at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },
}

impl Error {
    pub fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn model(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Model {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn oracle(stage: impl Into<String>, source: OracleError) -> Self {
        Error::Oracle {
            stage: stage.into(),
            source,
        }
    }
}

/// Failure modes of a guidance oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("capability `{0}` not supported")]
    Unsupported(&'static str),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("oracle rejected request: {0}")]
    Rejected(String),
}

impl OracleError {
    /// Transport failures and timeouts may succeed on retry; the rest will not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, OracleError::Transport(_) | OracleError::Timeout(_))
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
