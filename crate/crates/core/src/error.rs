use thiserror::Error;

/// Errors raised by the evidence computations and their surrounding plumbing.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A point alternative assigns zero probability to the observed block in
    /// both the numerator and the null mixture, so the ratio is 0/0.
    #[error("degenerate evidence: likelihood is zero under both the alternative and the null mixture")]
    DegenerateEvidence,

    /// `theta_a` lies outside the range where the inverse divergence is defined.
    #[error("theta_a = {theta_a} is outside the domain of the inverse divergence for delta = {delta}")]
    Domain { theta_a: f64, delta: f64 },

    /// A restricted prior could not be constructed from the given settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// The operation is only defined for a particular block design.
    #[error("unsupported design: {0}")]
    UnsupportedDesign(String),

    /// A numerical invariant broke down.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
