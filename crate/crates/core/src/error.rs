use thiserror::Error;

/// Errors raised by the pricing, corrector and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point outside the model domain: {0}")]
    Domain(String),

    #[error("degenerate corrector point: {0}")]
    Degenerate(String),

    #[error("derivative order {0} is not supported (maximum is 3)")]
    Order(usize),

    #[error("payoff derivative undefined at kink s = {0}")]
    Kink(f64),

    #[error("root not bracketed: {0}")]
    NotBracketed(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("invalid report: {0}")]
    InvalidReport(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
