use thiserror::Error;

/// Errors raised by the model, solvers and command-line layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlsError {
    /// An input lies outside the domain where the model is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// A requested value cannot be attained on the chosen branch.
    #[error("range error: {value} is outside the attainable range [{lower}, {upper}]")]
    Range { value: f64, lower: f64, upper: f64 },

    /// Time evolution lost unitarity beyond the allowed drift.
    #[error("stability error at step {step}: relative norm drift {drift:e}")]
    Stability { step: usize, drift: f64 },

    /// Configuration could not be parsed or validated.
    #[error("config error (line {line}, key `{key}`): {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl NlsError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        NlsError::Domain(msg.into())
    }
}

impl From<std::io::Error> for NlsError {
    fn from(e: std::io::Error) -> Self {
        NlsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, NlsError>;
