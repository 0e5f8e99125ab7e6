use thiserror::Error;

/// Errors raised anywhere in the emulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("mode {mode} mismatch: matrix has {cols} columns but tensor extent is {extent}")]
    ModeMismatch {
        mode: usize,
        cols: usize,
        extent: usize,
    },

    #[error("invalid tensor shape {dims:?}: {reason}")]
    InvalidShape { dims: Vec<usize>, reason: String },

    #[error("Kronecker factor {factor} is not positive definite (smallest pivot {pivot:e})")]
    NotPositiveDefinite { factor: usize, pivot: f64 },

    #[error("kernel matrix factorization failed after jitter {jitter:e}; smallest eigenvalue {min_eigenvalue:e}")]
    Factorization { jitter: f64, min_eigenvalue: f64 },

    #[error("refusing to materialize a {size}x{size} dense Kronecker product (guard {guard})")]
    SizeGuard { size: usize, guard: usize },

    #[error("invalid correlation parameter: {0}")]
    InvalidCorrelation(String),

    #[error("rank-deficient regression: {0}")]
    RankDeficient(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("non-finite objective at starting point {theta:?}")]
    NonFiniteStart { theta: Vec<f64> },

    #[error("optimizer failed to converge from any start (best objective {best})")]
    NonConvergence { best: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("peak ordering differs between runs: patches {a} and {b} swap order in run {run}")]
    InconsistentOrdering { a: usize, b: usize, run: usize },

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("comparison error: {0}")]
    Compare(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            got,
        })
    }
}
