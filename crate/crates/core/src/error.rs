use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("solver diverged: {0}")]
    Diverged(String),
    #[error("kernel annihilated: projection left no positive mass")]
    KernelAnnihilated,
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("unsupported file format: {0}")]
    UnsupportedFormat(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
