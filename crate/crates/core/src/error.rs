use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh dimensions: {0}")]
    Dimension(String),

    #[error("degenerate cell {cell}: volume {volume:e}")]
    Geometry { cell: usize, volume: f64 },

    #[error("phase field: {0}")]
    PhaseField(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("density exponent {exponent:.3e} at node {node} exceeds the overflow guard")]
    Divergence { node: usize, exponent: f64 },

    #[error("nonpositive density {value:e} at node {node}")]
    Domain { node: usize, value: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("preconditioner: {0}")]
    Preconditioner(String),

    #[error("linear solve did not converge ({what}): {iterations} iterations, residual {residual:e}")]
    LinearSolve {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("newton did not converge ({what}) after {iterations} iterations, residual {residual:e}")]
    Newton {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
