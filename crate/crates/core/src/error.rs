use thiserror::Error;

/// Errors raised by the solver layers.
///
/// Each variant names the layer that failed so callers (and the CLI exit
/// codes) can attribute a failure to parameter validation, quadrature,
/// root finding or simulation configuration.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {estimate:e}, error {error:e})")]
    Quadrature {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("no sign change found for {what} after {expansions} bracket expansions")]
    NoBracket { what: &'static str, expansions: usize },

    #[error("numeric failure in {layer}: {message}")]
    Numeric { layer: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn numeric(layer: &'static str, message: impl Into<String>) -> Self {
        Error::Numeric {
            layer,
            message: message.into(),
        }
    }

    /// True for errors caused by inputs rather than by a numerical layer.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::InvalidParams(_) | Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
