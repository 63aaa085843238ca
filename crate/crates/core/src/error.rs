//! Error type shared across the crate.

use thiserror::Error;

/// Outcome of a single optimizer start, carried by [`Error::NonConvergence`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StartRecord {
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric overflow: utility {utility} evaluated to {value}")]
    NumericOverflow { utility: &'static str, value: f64 },

    #[error("singular equilibrium: |det(I - Jacobian)| = {det:e}")]
    SingularEquilibrium { det: f64 },

    #[error("classification unavailable: no stable equilibrium was found")]
    ClassificationUnavailable,

    #[error("missing lagged cells: {}", format_cells(.cells))]
    MissingLag { cells: Vec<(u32, u32)> },

    #[error("no optimizer start converged ({} starts)", .starts.len())]
    NonConvergence { starts: Vec<StartRecord> },

    #[error("information matrix is not invertible (condition number {condition:e})")]
    NonInvertibleInformation { condition: f64 },

    #[error("rank-deficient design; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_cells(cells: &[(u32, u32)]) -> String {
    cells
        .iter()
        .map(|(g, t)| format!("(group {g}, period {t})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Stable machine-readable code used in JSON reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NumericOverflow { .. } => "numeric_overflow",
            Error::SingularEquilibrium { .. } => "singular_equilibrium",
            Error::ClassificationUnavailable => "classification_unavailable",
            Error::MissingLag { .. } => "missing_lag",
            Error::NonConvergence { .. } => "non_convergence",
            Error::NonInvertibleInformation { .. } => "non_invertible_information",
            Error::RankDeficient { .. } => "rank_deficient",
            Error::Parse { .. } => "parse_error",
            Error::Io(_) => "io_error",
            Error::Csv(_) => "csv_error",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericOverflow { .. }
                | Error::SingularEquilibrium { .. }
                | Error::ClassificationUnavailable
                | Error::NonConvergence { .. }
                | Error::NonInvertibleInformation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
