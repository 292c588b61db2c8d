//! Crate-wide error type with exit-code categories for the CLI.

/// Errors surfaced by the library and the CLI.
///
/// The CLI maps categories to exit codes: config -> 2, data -> 3,
/// checkpoint -> 4, everything else -> 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("tensor: {0}")]
    Candle(#[from] candle_core::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Machine-parsable reason code, one word.
    pub fn reason_code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) | Error::Image(_) => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Shape(_) => "shape",
            Error::Candle(_) => "tensor",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Image(_) => 3,
            Error::Checkpoint(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
