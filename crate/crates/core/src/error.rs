use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmaError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid range for {name}: [{lo}, {hi}]")]
    InvalidRange { name: String, lo: f64, hi: f64 },
    #[error("unroll of {len} steps exceeds truncation window {window}")]
    WindowOverflow { len: usize, window: usize },
    #[error("incomplete tape: {0}")]
    IncompleteTape(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NanGradient(String),
    #[error("non-deterministic forward pass detected: {0}")]
    NonDeterministic(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("missing prerequisite stage `{0}`")]
    MissingStage(String),
    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SmaError>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(SmaError::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn check_finite(context: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SmaError::NonFinite(context.to_string()))
    }
}
