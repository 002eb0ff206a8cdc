use thiserror::Error;

/// Errors produced while building panels, running the smoother or fitting a model.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DfmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("column `{name}` (index {index}) is constant; cannot standardise")]
    ConstantColumn { index: usize, name: String },

    #[error("column `{name}` (index {index}) has fewer than two observed values")]
    InsufficientObservations { index: usize, name: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("negative innovation variance {value} at t={t}, series={series}")]
    NegativeInnovationVariance { t: usize, series: usize, value: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("objective became non-finite at EM iteration {0}")]
    NonFiniteObjective(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no grid point converged ({evaluated} evaluated): {detail}")]
    TuningFailed { evaluated: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, DfmError>;
