use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Pivot is 1-based, counted in elimination order.
    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model is not well-posed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("numerical failure at iteration {iteration}: {source}")]
    Sampler {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Newton iteration did not converge after {iterations} steps")]
    NewtonNonConvergence { iterations: usize },

    #[error("mode search failed to converge within {evaluations} evaluations (last iterate {last:?})")]
    OptimizerBudget { evaluations: usize, last: Vec<f64> },

    #[error("log posterior is not finite at every candidate point")]
    NonFiniteDensity,
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Sampler { .. }
                | Error::NewtonNonConvergence { .. }
                | Error::OptimizerBudget { .. }
                | Error::NonFiniteDensity
        )
    }
}
