use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("small divisor {divisor:.3e} at l = {ell:?}, j = {j:?}")]
    SmallDivisor {
        ell: Vec<i64>,
        j: Option<i64>,
        divisor: f64,
    },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e}, contraction {contraction:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        contraction: f64,
    },

    #[error("hypothesis {0} violated: {1}")]
    Hypothesis(&'static str, String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("resonance gate failed: margin {margin:.4} at l = {ell:?}, j = {j:?}")]
    Resonance {
        margin: f64,
        ell: Vec<i64>,
        j: Option<i64>,
    },

    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("linear algebra: {0}")]
    Linalg(String),

    #[error("reduction aborted at step {step} ({} transformations kept): {source}", ledger.len())]
    Aborted {
        step: usize,
        /// Transformations completed before the failure.
        ledger: Vec<crate::ledger::Transform>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
