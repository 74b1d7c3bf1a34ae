//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. The CLI maps each variant
//! onto a distinct process exit code, so keep the variants coarse and stable.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("strand too short: arc length {len} < step {step}")]
    TooShort { len: f64, step: f64 },

    #[error("point outside volume: ({0}, {1}, {2})")]
    Escaped(f64, f64, f64),

    #[error("model transform leaves bounding box: {0}")]
    OutOfBox(String),

    #[error("empty model where strands are required")]
    EmptyModel,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI. 0 is success, 1 is reserved for panics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            Error::DigestMismatch { .. } => 3,
            Error::ShapeMismatch { .. } => 4,
            Error::Config(_) => 5,
            Error::Format(_) => 6,
            Error::TooShort { .. }
            | Error::Escaped(..)
            | Error::OutOfBox(_)
            | Error::EmptyModel
            | Error::Invalid(_) => 7,
            Error::Diverged(_) => 8,
        }
    }

    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }
}
