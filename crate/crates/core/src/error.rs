use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Noise is too small for best responses to be unique.
    #[error("noise regime: sigma^2 = {sigma_sq:.6} does not exceed the uniqueness bound {bound:.6}")]
    Regime { sigma_sq: f64, bound: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last step {last_step:.3e})")]
    NonConvergence {
        iterations: usize,
        last_step: f64,
        trace: Vec<f64>,
    },

    #[error("rank-deficient design: {0}")]
    Rank(String),

    #[error("ill-conditioned gradient denominator: density {density:.6e}, dPi/ds {dpi_ds:.6e}")]
    IllConditioned { density: f64, dpi_ds: f64 },

    #[error("degenerate step: vector norm {0:.3e} too small to project")]
    DegenerateStep(f64),

    #[error("bracket failure: {0}")]
    Bracket(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}
