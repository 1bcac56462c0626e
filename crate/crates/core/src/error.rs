use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate obstacle: {0}")]
    DegenerateObstacle(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("model has no weight checksum; train or load weights first")]
    UntrainedModel,
    #[error("training diverged at step {step}: loss {loss} exceeds 10x initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("sampler left the stability box at step {step} (max |value| {value})")]
    Unstable { step: usize, value: f64 },
    #[error("obstacle placement failed after {0} rejections")]
    PlacementFailed(usize),
    #[error("planning failed: {0}")]
    PlanningFailed(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
