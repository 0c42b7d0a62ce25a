use thiserror::Error;

use crate::expr::ParseError;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// Two fields (or a field and an operator) live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    /// Expression evaluation failed while sampling onto a grid.
    #[error("evaluation failed at node {node} (x = {x}): {reason}")]
    Sample { node: usize, x: f64, reason: String },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("solver failed: {0}")]
    SolverFailure(String),

    /// A time integration produced a non-finite value.
    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },

    /// A quantity that must be strictly positive was not.
    #[error("positivity violated: {0}")]
    NonPositive(String),
}

pub type Result<T> = std::result::Result<T, Error>;
