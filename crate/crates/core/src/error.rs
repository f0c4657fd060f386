use thiserror::Error;

#[derive(Debug, Error)]
pub enum DipaError {
    #[error("malformed instance: {0}")]
    MalformedInstance(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Autodiff(#[from] dipa_autodiff::AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, DipaError>;
