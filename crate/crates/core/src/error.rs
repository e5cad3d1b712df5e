use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid spec: {0}")]
    InvalidGrid(String),
    #[error("invalid arm model: {0}")]
    InvalidArm(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("scene infeasible: {0}")]
    InfeasibleScene(String),
    #[error("configs {from:?} -> {to:?} are not a unit motion primitive")]
    InvalidPrimitive { from: Vec<i32>, to: Vec<i32> },
    #[error("observer sample at t={t} does not follow t={last_t}")]
    NonMonotonicTime { t: f64, last_t: f64 },
    #[error("active surface filter removed every candidate point")]
    EmptyActiveSet,
    #[error("point {0:?} lies outside the grid")]
    OutOfGrid(Vec<f64>),
    #[error("external predictor failed: {0}")]
    ExternalPredictor(String),
    #[error("path is not a chain of motion primitives at index {0}")]
    PathDiscontinuity(usize),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
