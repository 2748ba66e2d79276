use thiserror::Error;

/// Errors raised by the discretization, solver and sampling layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("index not in basis: {0:?}")]
    IndexNotInBasis(Vec<u32>),

    #[error("root finding for degree {degree} did not converge")]
    RootFinding { degree: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular diagonal block for stochastic mode {mode}")]
    SingularBlock { mode: usize },

    #[error("FGMRES did not converge after {iterations} iterations (residual {final_residual:.3e})")]
    NotConverged {
        iterations: usize,
        final_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("slab {slab}: {source}")]
    Slab {
        slab: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
