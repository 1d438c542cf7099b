use thiserror::Error;

/// Errors produced by configuration handling, solves, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text (JSON syntax, wrong types). Carries the parser's
    /// line/column message.
    #[error("parse error: {0}")]
    Parse(String),

    /// Structurally valid input that violates a model constraint.
    #[error("invalid scenario: {0}")]
    Validation(String),

    /// A quantity left its admissible domain (non-positive density, value
    /// outside the configured band, coordinate outside an inverse's range).
    #[error("domain error: {0}")]
    Domain(String),

    /// A nonlinear solve (node coupling, boundary inversion) failed to
    /// converge or left the subsonic branch.
    #[error("solve failed: {0}")]
    Solve(String),

    /// Runtime failure while advancing the twin system.
    #[error("solver failure at t = {time:.6}: {message}")]
    Solver { time: f64, message: String },

    /// Strict-mode rejection: an audited assumption or admissibility window
    /// was violated.
    #[error("strict-mode audit failure: {0}")]
    StrictAudit(String),

    /// The requested horizon or data size violates the certified fixed-point
    /// budget.
    #[error("budget violation: {0}")]
    Budget(String),

    /// The fixed-point iteration failed to contract.
    #[error("contraction failure: {0}")]
    Contraction(String),

    /// A diagnostic could not be computed from the given samples.
    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    /// Filesystem or encoding problem surfaced through the library API.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Shorthand used by the steppers.
    pub(crate) fn solver(time: f64, message: impl Into<String>) -> Self {
        Error::Solver { time, message: message.into() }
    }
}
