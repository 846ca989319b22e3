use thiserror::Error;

/// Errors raised by the estimation, scoring and search routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph contains a directed cycle through {cycle:?}")]
    Cycle { cycle: Vec<usize> },

    #[error("matrix is singular or ill-conditioned ({context})")]
    Singular { context: String },

    #[error("graphical lasso did not converge after {iterations} iterations (kkt residual {kkt_residual:.3e})")]
    NotConverged { iterations: usize, kkt_residual: f64 },

    #[error("enumeration cap exceeded: {0}")]
    CapExceeded(String),

    #[error("treewidth {width} exceeds the configured cap {cap}")]
    WidthExceeded { width: usize, cap: usize },

    #[error("record budget exceeded: {records} records (budget {budget})")]
    RecordOverflow { records: usize, budget: usize },

    #[error("invalid decomposition: {0}")]
    InvalidDecomposition(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn singular(ctx: impl Into<String>) -> Self {
        Error::Singular {
            context: ctx.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
