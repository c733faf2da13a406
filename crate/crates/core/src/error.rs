use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid is not commensurate: {0}")]
    NonCommensurate(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("menu items {0} and {1} are identical")]
    DistinctItems(usize, usize),

    #[error("invalid impulse menu: {0}")]
    InvalidMenu(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("level {level}: child of cumulative impulse {a_id} via item {item} is outside the lattice")]
    MissingChild { level: usize, a_id: usize, item: usize },

    #[error("value below obstacle at level {level}, a_id {a_id}, i {i}, state {state}: Y={y}, O={o}")]
    ObstacleViolation {
        level: usize,
        a_id: usize,
        i: usize,
        state: usize,
        y: f64,
        o: f64,
    },

    #[error("exponent {0} exceeds the overflow cap; use log-space evaluation")]
    Overflow(f64),

    #[error("inadmissible trace: {0}")]
    InadmissibleTrace(String),

    #[error("inadmissible rule: {0}")]
    InadmissibleRule(String),

    #[error("discount rate must be positive, got {0}")]
    NonPositiveRate(f64),

    #[error("fixed-point iteration did not converge in {n_max} levels (last residual {residual:e})")]
    NoConvergence { n_max: usize, residual: f64 },

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("invalid path generator: {0}")]
    BadSpec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
