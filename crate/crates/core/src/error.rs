use thiserror::Error;

/// Errors raised by the forward and inverse solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("matrix R_{player}{player} is singular")]
    SingularControlWeight { player: usize },

    #[error("riccati integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("demonstration {demo} exploded at t = {time}")]
    Explosion { demo: usize, time: f64 },

    #[error("ambiguous identification for player {player}: null space has dimension {nullity}")]
    AmbiguousIdentification { player: usize, nullity: usize },

    #[error("recovered cost for player {player} is indefinite: {detail}")]
    IndefiniteEstimate { player: usize, detail: String },

    #[error("degenerate noise: diagonal entry {index} of the covariance is {value}")]
    DegenerateNoise { index: usize, value: f64 },

    #[error("covariance is not positive definite")]
    SingularCovariance,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("metric undefined: ground-truth {0} is identically zero")]
    UndefinedMetric(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
