use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("a grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),

    #[error("invalid grid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("non-finite density value at ({x}, {y})")]
    NonFinite { x: f64, y: f64 },

    #[error("observation record is impossible on this grid: backward vector {index} vanishes")]
    ImpossibleRecord { index: usize },

    #[error("zero probability mass at index {index}")]
    ZeroMass { index: usize },

    #[error("grid pair ({0}, {1}) has zero overlap and cannot couple")]
    ZeroOverlap(usize, usize),

    #[error("residual kernel entry {value:e} is negative: epsilon exceeds the pair overlap")]
    NegativeResidual { value: f64 },

    #[error("empty set: {0}")]
    EmptySet(String),

    #[error("coupling width c = {c} too small: need c^2 > {bound}")]
    CouplingWidthTooSmall { c: f64, bound: f64 },

    #[error("drift condition fails at index {index}: lambda = {lambda} at pair ({x}, {x_prime})")]
    DriftFails {
        index: usize,
        lambda: f64,
        x: f64,
        x_prime: f64,
    },

    #[error("check failed: {0}")]
    CheckFailed(String),

    #[error("not applicable: {0}")]
    Inapplicable(String),

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
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }

    /// Errors caused by the user's configuration rather than by a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownPreset(_)
                | Error::InvalidParameter { .. }
                | Error::GridTooSmall(_)
                | Error::InvalidRange { .. }
                | Error::CouplingWidthTooSmall { .. }
        )
    }
}
