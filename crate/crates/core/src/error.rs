use thiserror::Error;

use crate::scenario::Diagnostic;

/// Errors raised while reading a scenario document.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("scenario failed validation ({} diagnostics)", .0.len())]
    Validation(Vec<Diagnostic>),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("requested {requested} environment operation on a {actual} scenario")]
    Environment {
        requested: &'static str,
        actual: &'static str,
    },

    #[error("value {value} is not on the grid (step {delta})")]
    OffGrid { value: f64, delta: f64 },

    #[error("({age}, {time}) lies outside the scenario domain")]
    OutOfRange { age: f64, time: f64 },

    #[error("integration failure at x = {x}: {reason}")]
    IntegrationFailure { x: f64, reason: String },

    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {sigma})"
    )]
    NonConvergence {
        iterations: usize,
        sigma: f64,
        last: Vec<f64>,
    },

    #[error("numerical inconsistency: {0}")]
    BracketFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Load(#[from] LoadError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
