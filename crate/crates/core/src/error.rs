use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("trace too short: need at least {needed} samples, got {got}")]
    TraceTooShort { needed: usize, got: usize },

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("degenerate orientation: mean acceleration norm {0:.3e} is too small to align")]
    DegenerateOrientation(f64),

    #[error("degenerate channel {channel}: zero variance after detrending")]
    DegenerateChannel { channel: usize },

    #[error("dataset format error: {0}")]
    DatasetFormat(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("no epochs satisfy the representative selection rule")]
    SelectionEmpty,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error stems from bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Spec(_) | Error::DatasetFormat(_) | Error::InvalidSample(_) | Error::Shape(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
