use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("state is not normalized (norm² = {norm_sqr})")]
    Unnormalized { norm_sqr: f64 },

    #[error("operation would populate energy level {level} beyond the ladder truncation n_max = {n_max}")]
    TruncationOverflow { level: i32, n_max: usize },

    #[error("projectors are not orthogonal (‖P₊P₋‖ = {residual:e})")]
    NonOrthogonal { residual: f64 },

    #[error("operator dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("expectation value {value} outside [-1, 1]")]
    OutOfRange { value: f64 },

    #[error("malformed beamline: {0}")]
    MalformedBeamline(String),

    #[error("zero total counts in setting quad")]
    ZeroCounts,

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("target contrast {target} unreachable within spread bounds [0, {max_spread})")]
    Unreachable { target: f64, max_spread: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
