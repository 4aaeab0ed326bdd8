use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("grid {rows}x{cols} is too small (need at least 3x3)")]
    GridTooSmall { rows: usize, cols: usize },

    #[error("non-positive variance at index {index}")]
    NonPositiveVariance { index: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("sample too small: need at least {required} columns, got {actual}")]
    SampleTooSmall { required: usize, actual: usize },

    #[error("coordinate {index} has zero sum of squares; likelihood is unbounded")]
    ZeroVariance { index: usize },

    #[error("decay model requires at least two distinct Laplace eigenvalues")]
    Unidentifiable,

    #[error("decay model family mismatch: expected {expected}")]
    FamilyMismatch { expected: &'static str },

    #[error("no sign change of the decay-rate residual on |alpha| <= {limit}")]
    NoBracket { limit: f64 },

    #[error("solver did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("parameters are infeasible: some variance would be non-positive")]
    InfeasibleParams,

    #[error("initial parameters are infeasible")]
    InfeasibleInit,

    #[error("Hessian is singular")]
    SingularHessian,

    #[error("projected Fisher information is singular")]
    SingularInformation,

    #[error("sample is degenerate: all columns are zero")]
    DegenerateSample,

    #[error("training fold {fold} has an all-zero covariance")]
    FoldTooSmall { fold: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("table has no rows to plot")]
    EmptyTable,

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-parsable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::GridTooSmall { .. } => "grid_too_small",
            Error::NonPositiveVariance { .. } => "non_positive_variance",
            Error::NotPositiveDefinite => "not_positive_definite",
            Error::SampleTooSmall { .. } => "sample_too_small",
            Error::ZeroVariance { .. } => "zero_variance",
            Error::Unidentifiable => "unidentifiable",
            Error::FamilyMismatch { .. } => "family_mismatch",
            Error::NoBracket { .. } => "no_bracket",
            Error::NotConverged { .. } => "not_converged",
            Error::InfeasibleParams => "infeasible_params",
            Error::InfeasibleInit => "infeasible_init",
            Error::SingularHessian => "singular_hessian",
            Error::SingularInformation => "singular_information",
            Error::DegenerateSample => "degenerate_sample",
            Error::FoldTooSmall { .. } => "fold_too_small",
            Error::EmptyInput => "empty_input",
            Error::EmptyTable => "empty_table",
            Error::Parse { .. } => "parse_error",
            Error::Validation(_) => "validation_error",
            Error::Io(_) => "io_error",
        }
    }
}
