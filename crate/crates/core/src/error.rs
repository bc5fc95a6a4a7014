use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// The differential is not a Stiefel point.
    #[error("rank-deficient differential (det U = {det_gram:e})")]
    RankDeficient { det_gram: f64 },

    #[error("order {n} exceeds the permutation guard ({max})")]
    TooLarge { n: usize, max: usize },

    #[error("invalid index set {0}")]
    InvalidIndexSet(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("the Stiefel form is only defined for even n (got n = {0})")]
    OddDimension(usize),

    #[error("marked self-intersection is not at (-1/2, 0, ..., 0) ~ (1/2, 0, ..., 0): {0}")]
    PreimageMismatch(String),

    #[error("invalid bump: {0}")]
    InvalidBump(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(
        "non-transversal self-intersection at {preimage_1:?} ~ {preimage_2:?} (det = {det:e})"
    )]
    NonTransversal {
        preimage_1: Vec<f64>,
        preimage_2: Vec<f64>,
        det: f64,
    },

    #[error("degenerate stacked determinant ({det:e})")]
    DegenerateDeterminant { det: f64 },

    #[error("subdivision budget exhausted: value {value} with error estimate {error_estimate:e}")]
    Budget { value: f64, error_estimate: f64 },

    #[error("integral {raw_value} is too far from an integer (residual {residual})")]
    RoundingAmbiguous { raw_value: f64, residual: f64 },
}
