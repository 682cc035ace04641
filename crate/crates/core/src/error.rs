use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("capture parse error: {0}")]
    Capture(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data, with a location where one exists.
    #[error("data error: {0}")]
    Data(String),

    #[error("class `{0}` has no samples")]
    EmptyClass(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate contrastive batch: no anchor has a positive")]
    DegenerateBatch,

    #[error("training diverged at epoch {epoch}: loss is {loss}; try a lower learning rate (current {lr})")]
    Diverged { epoch: usize, loss: f64, lr: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    /// A pipeline stage failed; artifacts of earlier stages are kept.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from invalid configuration or arguments
    /// rather than from the data being processed.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_usage(),
            _ => false,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
