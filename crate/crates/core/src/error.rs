use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not square: {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("graph contains a directed cycle")]
    Cyclic,

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("row {row} has no observed entries")]
    FullyMissingRow { row: usize },

    #[error("column {col} has no observed entries")]
    FullyMissingColumn { col: usize },

    #[error("degenerate residual variance at node {node}: {value:e} <= {floor:e}")]
    DegenerateResidual { node: usize, value: f64, floor: f64 },

    #[error(
        "rejection sampling budget exhausted at row {row}: {attempts} attempts produced \
         {accepted}/{needed} samples (log envelope {log_envelope:.4})"
    )]
    AcceptanceBudget {
        row: usize,
        attempts: u64,
        accepted: usize,
        needed: usize,
        log_envelope: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("masking failed: {0}")]
    Masking(String),

    #[error("{context}: {source}")]
    EmIteration {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an error with EM-iteration context.
    pub fn in_iteration(self, iter: usize, phase: &str) -> Self {
        Error::EmIteration {
            context: format!("EM iteration {iter}, {phase}"),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
