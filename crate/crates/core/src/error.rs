use thiserror::Error;

/// Errors produced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate view: only {visible} landmarks visible (need at least {required})")]
    DegenerateView { visible: usize, required: usize },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("ambiguous essential-matrix decomposition: {0}")]
    AmbiguousDecomposition(String),

    #[error("no valid candidate to select from")]
    NoCandidate,

    #[error("world generation failed: {0}")]
    Generation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DegenerateView { .. } => "degenerate_view",
            Error::DegenerateConfiguration(_) => "degenerate_configuration",
            Error::AmbiguousDecomposition(_) => "ambiguous_decomposition",
            Error::NoCandidate => "no_candidate",
            Error::Generation(_) => "generation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
