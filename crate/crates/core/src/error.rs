use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model, layer or run configuration is invalid or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is malformed (bad label, wrong channel count, empty split...).
    #[error("data error: {0}")]
    Data(String),

    /// An API was called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// A forward result contained NaN or infinity.
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    /// A linear-algebra routine failed (e.g. kernel matrix not positive definite).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A class has fewer samples than the requested fold count.
    #[error("stratification error: class `{class}` has {count} samples, fewer than k = {k}")]
    Stratification {
        class: String,
        count: usize,
        k: usize,
    },

    #[error("path not found: {}", .0.display())]
    PathNotFound(PathBuf),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
