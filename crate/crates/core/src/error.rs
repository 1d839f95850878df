use thiserror::Error;

use crate::lattice::Site;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("region is empty")]
    EmptyRegion,

    #[error("k = {k:?} lies outside the projection of the region")]
    EmptySection { k: Vec<i64> },

    #[error("matrix is numerically singular (smallest singular value ~ {smallest_singular_value:e})")]
    Singular {
        smallest_singular_value: f64,
        most_resonant: Option<Site>,
    },

    #[error("complement block `{block}` is singular (smallest singular value ~ {smallest_singular_value:e})")]
    ComplementSingular {
        block: &'static str,
        smallest_singular_value: f64,
    },

    #[error("inverse residual {residual:e} exceeds {tolerance:e}")]
    InverseResidual { residual: f64, tolerance: f64 },

    #[error("size {size} exceeds cap {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),

    #[error("non-finite sample at index {0}")]
    NonFinite(usize),

    #[error("{what} did not converge; last iterates {last:?} and {previous:?}")]
    NonConvergence {
        what: &'static str,
        last: Vec<f64>,
        previous: Vec<f64>,
    },

    #[error("Newton iteration diverged at step {step}: residuals {residuals:?}")]
    Diverged { step: usize, residuals: Vec<f64> },

    #[error("linearization singular at Newton step {step}: {source}")]
    NewtonSingular {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("blow-up at t = {time}: norm {norm:e} exceeds 10x initial {initial:e}")]
    BlowUp { time: f64, norm: f64, initial: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::DimensionMismatch { .. }
            | Error::EmptyRegion
            | Error::EmptySection { .. }
            | Error::SizeCap { .. }
            | Error::UnknownPredicate(_)
            | Error::Validation(_)
            | Error::Config(_)
            | Error::Json(_) => 2,
            Error::Io(_) => 2,
            _ => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyRegion => "empty_region",
            Error::EmptySection { .. } => "empty_section",
            Error::Singular { .. } => "singular",
            Error::ComplementSingular { .. } => "complement_singular",
            Error::InverseResidual { .. } => "inverse_residual",
            Error::SizeCap { .. } => "size_cap",
            Error::UnknownPredicate(_) => "unknown_predicate",
            Error::NonFinite(_) => "non_finite",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Diverged { .. } => "diverged",
            Error::NewtonSingular { .. } => "newton_singular",
            Error::BlowUp { .. } => "blow_up",
            Error::Validation(_) => "validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }
}
