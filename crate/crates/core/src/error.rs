use thiserror::Error;

use crate::targets::ModelState;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid domain: lower bound {lower} must be below upper bound {upper}")]
    InvalidDomain { lower: f64, upper: f64 },

    #[error("point {x} lies outside the support [{lower}, {upper}]")]
    OutOfSupport { x: f64, lower: f64, upper: f64 },

    #[error("unsupported penalty order {0} (expected 2 or 3)")]
    UnsupportedOrder(usize),

    #[error("perturbation must be positive, got {0}")]
    InvalidPerturbation(f64),

    #[error("invalid parameter `{name}` = {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("non-finite evaluation of {what} at {at}")]
    NumericFailure { what: &'static str, at: f64 },

    #[error("linear predictor {0} exceeds the overflow guard")]
    PredictorOverflow(f64),

    #[error("no convergence after {iterations} iterations")]
    ConvergenceFailure { iterations: usize },

    #[error("initialization failed: {0}")]
    InitializationFailure(String),

    #[error("envelope error: {0}")]
    EnvelopeError(String),

    #[error("sampler stalled after {rejections} rejections")]
    SamplerStall { rejections: usize },

    #[error("target did not fall below the grid threshold after {doublings} doublings")]
    UnboundedTarget { doublings: usize },

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    #[error("need at least {needed} retained draws, found {found}")]
    InsufficientDraws { needed: usize, found: usize },

    #[error("iteration {iteration}, coordinate {coordinate}: {source}")]
    Sampler {
        iteration: usize,
        coordinate: String,
        #[source]
        source: Box<Error>,
        state: Box<ModelState>,
    },
}

impl Error {
    /// True for failures rooted in floating-point trouble rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NumericFailure { .. }
            | Error::PredictorOverflow(_)
            | Error::ConvergenceFailure { .. }
            | Error::EnvelopeError(_)
            | Error::SamplerStall { .. }
            | Error::UnboundedTarget { .. }
            | Error::InitializationFailure(_) => true,
            Error::Sampler { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, value })
    }
}
