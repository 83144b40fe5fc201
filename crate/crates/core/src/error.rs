use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("infeasible budget {budget}: box admits totals in [{min_total}, {max_total}]")]
    InfeasibleBudget {
        budget: f64,
        min_total: f64,
        max_total: f64,
    },

    #[error("deferrable application {da} has no feasible placement from slot {from_slot}")]
    EmptyFeasibleSet { da: u32, from_slot: usize },

    /// The iterative solver ran out of iterations. `best` holds the best iterate found.
    #[error("{solver} did not reach tolerance after {iterations} iterations (residual {residual:e})")]
    MaxItersExceeded {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        best: Box<Vec<f64>>,
    },

    #[error("expected {expected} values, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("reference objective is zero; relative gap undefined (absolute gap {absolute_gap})")]
    ZeroReference { absolute_gap: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
