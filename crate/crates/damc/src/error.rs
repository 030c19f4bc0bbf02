//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration file or config struct violates its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An argument violates an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The gap between the d-th and (d+1)-th singular values is too small
    /// for condition-number diagnostics to be meaningful.
    #[error("degenerate eigengap: sigma_d - sigma_(d+1) = {gap:.3e} is below {min:.3e}")]
    DegenerateEigengap { gap: f64, min: f64 },

    /// Bound evaluation needs a uniformly bounded, Lipschitz loss.
    #[error(
        "the `{0}` loss has no finite uniform bound; bound evaluation requires a bounded \
         loss — use `clipped-squared` with an explicit clip range"
    )]
    UnboundedLoss(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
