use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("edge ({0}, {1}) is out of range for {2} lanes")]
    EdgeOutOfRange(usize, usize, usize),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite value produced by {op} at ({row}, {col})")]
    NonFinite {
        op: &'static str,
        row: usize,
        col: usize,
    },

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("polyline has zero arc length")]
    ZeroLength,

    #[error("non-finite loss in scene {scene} at step {step}")]
    NonFiniteLoss { scene: String, step: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
