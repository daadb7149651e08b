use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] stabmix_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("histories sampled at different times: {0}")]
    MismatchedSampling(String),
    #[error("unknown problem {0}")]
    UnknownProblem(String),
    #[error("unknown scheme {0}")]
    UnknownScheme(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
