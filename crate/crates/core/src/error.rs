use thiserror::Error;

pub type Result<T, E = CapsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CapsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {bound}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// Every decoder slot produced the padding token.
    #[error("decoded subset is empty (all slots are padding)")]
    EmptyDecode,

    #[error("failed to load {what}: {msg}")]
    Load { what: String, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CapsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CapsError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CapsError::Contract(msg.into())
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        CapsError::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Wraps an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            already @ CapsError::Stage { .. } => already,
            other => CapsError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Name of the failing stage, if this error was raised inside the pipeline.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            CapsError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
