use thiserror::Error;

pub type Result<T, E = MacaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MacaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("backward requested before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("enumeration of {requested} items exceeds the configured cap of {cap}")]
    EnumerationCap { requested: u128, cap: u128 },
    #[error("action {action} out of range for agent {agent} ({n_actions} actions)")]
    ActionOutOfRange {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("degenerate policy: {0}")]
    DegeneratePolicy(String),
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl MacaError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        MacaError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        MacaError::InvalidArgument(msg.into())
    }
}
