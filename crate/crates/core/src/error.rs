use thiserror::Error;

/// Errors produced by the plant, controller, solver and attack routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("log of length {len} is too short for a Hankel matrix of depth {depth}")]
    LogTooShort { len: usize, depth: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver stopped after {iterations} iterations with residual {residual:.3e} (tolerance {tolerance:.3e})")]
    MaxIterations {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("refusing to differentiate: optimality residual {residual:.3e} exceeds {tolerance:.3e}")]
    DegenerateSolution { residual: f64, tolerance: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
