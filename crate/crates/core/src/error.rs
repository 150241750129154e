use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("doubling exceeds domain")]
    DoublingExceedsDomain,

    #[error("not Hermitian: asymmetry {0:.3e} exceeds tolerance")]
    NotHermitian(f64),

    #[error("not positive definite")]
    NotPositiveDefinite,

    #[error("inadmissible exponent {0}")]
    InadmissibleExponent(f64),

    #[error("overflow: weight too singular for grid")]
    Overflow,

    #[error("degenerate weight")]
    DegenerateWeight,

    #[error("weight not invertible on cube")]
    WeightNotInvertible,

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("frequency content outside window")]
    OutsideWindow,

    #[error("tail divergence: lambda*n*q = {0} must exceed n")]
    TailDivergence(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
