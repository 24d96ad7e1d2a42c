use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error at data row {row}: {msg}")]
    Validation { row: usize, msg: String },

    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    #[error("tilt overflow: gamma * s(y) = {exponent} exceeds the limit at y = {y}")]
    TiltOverflow { y: f64, exponent: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected} covariates, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// `trace` holds the objective history (penalized deviance for IRLS,
    /// best CV value per restart for the single-index search) and `best`
    /// the best parameter vector found before giving up.
    #[error("no convergence: {msg}")]
    NonConvergence {
        msg: String,
        trace: Vec<f64>,
        best: Vec<f64>,
    },

    #[error("undefined kernel window for observation {0}")]
    UndefinedWindow(usize),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap calibration failed: {0}")]
    Calibration(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input or configuration rather than by
    /// the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Validation { .. }
                | Error::Config(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Shape { .. }
                | Error::InfeasibleSplit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
