use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the model, solver and statics layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("gains entry ({row}, {col}) = {value} is not a finite non-negative number")]
    InvalidGains { row: usize, col: usize, value: f64 },

    #[error("population entry {index} = {value} must be finite and positive")]
    InvalidPopulation { index: usize, value: f64 },

    #[error("every type is unpopulated")]
    AllUnpopulated,

    #[error("log-amplitude {index} = {value:e} exceeds the bound {bound}; rescale the populations")]
    Scaling { index: usize, value: f64, bound: f64 },

    #[error("solver did not converge in {iterations} iterations (residual norm {residual_norm:e})")]
    NonConvergence { iterations: usize, residual_norm: f64 },

    #[error("Hessian is not positive definite at iteration {iteration} (iterate {iterate:?})")]
    Factorization { iteration: usize, iterate: Vec<f64> },

    #[error("power iteration did not converge in {iterations} iterations")]
    PowerIteration { iterations: usize },

    #[error("invalid choice model: {0}")]
    ChoiceModel(String),

    #[error("invalid option: {0}")]
    Options(String),
}
