use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch between operands")]
    GridMismatch,

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("bisection bracket failure: {0}")]
    Bracket(String),

    #[error("profile under-resolved: width {width:.3e} < {required:.3e}")]
    UnderResolved { width: f64, required: f64 },

    #[error("time {t} is outside the valid range: {reason}")]
    TimeOutOfRange { t: f64, reason: String },

    #[error("content leaves the periodic box: {0}")]
    OutsideBox(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
