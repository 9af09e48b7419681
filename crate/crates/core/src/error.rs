use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("discrete space needs at least one choice")]
    EmptyDiscrete,
    #[error("space needs at least one dimension")]
    NoDimensions,
    #[error("multi-discrete dimension {dim} has arity {arity}, need at least 2")]
    ArityTooSmall { dim: usize, arity: usize },
    #[error("invalid continuous bound [{low}, {high}]")]
    InvalidBound { low: f64, high: f64 },
    #[error("low/high length mismatch ({low} vs {high})")]
    BoundLengthMismatch { low: usize, high: usize },
    #[error("composite space must have at least one part")]
    EmptyComposite,
    #[error("composite parts may not be composite")]
    NestedComposite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapingError {
    #[error("transform {index}: {reason}")]
    IncompatibleTransform { index: usize, reason: String },
    #[error("action {action} is not in space {space}")]
    OutOfRange { action: String, space: String },
    #[error("probability and availability lengths differ ({probs} vs {available})")]
    LengthMismatch { probs: usize, available: usize },
    #[error("every action is masked out")]
    AllMasked,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error("action {action} is not valid for {space}")]
    InvalidAction { action: String, space: String },
    #[error("environment {env}: {source}")]
    InEnv {
        env: usize,
        #[source]
        source: Box<EnvError>,
    },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no policy head for action space {0}")]
    UnsupportedSpace(String),
    #[error("action {0} is outside the policy head")]
    OutOfRange(String),
    #[error("every action is masked out")]
    AllMasked,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("checkpoint is inconsistent: {0}")]
    Corrupt(String),
}
