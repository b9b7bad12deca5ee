use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parabolicity (A1) violated at t = {t}, x = {x}: margin {margin} < lambda {lambda}")]
    Parabolicity { t: f64, x: f64, margin: f64, lambda: f64 },

    #[error("singular banded system (zero pivot at row {row})")]
    Singular { row: usize },

    #[error("step {step} failed: {reason} (best residual {residual:e})")]
    StepFailure { step: usize, residual: f64, reason: String },

    #[error("study aborted: {excluded} of {total} paths failed")]
    StudyFailed { excluded: usize, total: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
