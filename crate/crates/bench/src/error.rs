use evifuse_core::CoreError;

/// Errors from the benchmark layer: data IO, degenerate statistics, and
/// training divergence, plus anything bubbling up from the loss kernels.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        BenchError::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, detail: impl Into<String>) -> Self {
        BenchError::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
