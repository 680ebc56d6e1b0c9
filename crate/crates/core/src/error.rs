use std::io;

use thiserror::Error;

/// Errors produced by the decomposition library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mode index {mode} out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite; check that lambda/rho are positive")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("system of size {size} exceeds the dense-solve cap of {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("zero denominator in decoupled solve; use lambda > 0")]
    ZeroDenominator,

    #[error("pcg breakdown at iteration {iteration}: p'Ap = {curvature:e} (operator not positive definite?)")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("non-finite value encountered in pcg at iteration {0}")]
    NonFinite(usize),

    #[error("data has zero norm; relative error undefined")]
    ZeroNorm,

    #[error("solver {solver} cannot be used with {data} data")]
    SolverMismatch { solver: &'static str, data: &'static str },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
