use thiserror::Error;

use crate::qr_solver::QuantileFit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The design matrix does not have full column rank. `columns` lists the
    /// columns that are (numerically) linear combinations of earlier ones.
    #[error("rank-deficient design in {stage}: columns {columns:?} are collinear with earlier columns; run the identification diagnostics (`diagnose`) for the eigenvalue report")]
    RankDeficient { stage: String, columns: Vec<String> },

    #[error("quantile solver did not converge at level {level} after {iterations} pivots")]
    NonConvergence {
        level: f64,
        iterations: usize,
        best: Box<QuantileFit>,
    },

    #[error("solver failed at level {level}: {source}")]
    AtLevel {
        level: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate bins: {0}")]
    DegenerateBins(String),

    #[error("degenerate range: {0}")]
    DegenerateRange(String),

    #[error("invalid data-generating process: {0}")]
    InvalidDgp(String),

    #[error("quantile level {level} lies outside the identified range [{lo}, {hi}]")]
    OutOfIdentifiedRange { level: f64, lo: f64, hi: f64 },

    #[error("invalid evaluation region: {0}")]
    InvalidRegion(String),

    #[error("identification failure: {0}")]
    Identification(String),

    #[error("bootstrap failed: {failed} of {total} replications could not be refitted")]
    Bootstrap { failed: usize, total: usize },

    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Strips `AtLevel` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtLevel { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn at_level(self, level: f64) -> Error {
        match self {
            e @ Error::AtLevel { .. } => e,
            e => Error::AtLevel {
                level,
                source: Box::new(e),
            },
        }
    }
}
