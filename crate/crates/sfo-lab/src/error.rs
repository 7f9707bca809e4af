//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch dimensions do not line up.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    /// A value left the finite range mid-computation.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    /// Invalid argument or configuration value.
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },

    /// Unknown adapter name referenced.
    #[error("unknown adapter {name:?}")]
    UnknownAdapter { name: String },

    /// Adapter name already attached.
    #[error("adapter {name:?} already attached")]
    DuplicateAdapter { name: String },

    /// ODE integration produced a non-finite state.
    #[error("sampler diverged at step {step}")]
    SamplerDiverged { step: usize },

    /// Training loss became non-finite.
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: u64 },

    /// Checkpoint or dataset file failed its integrity check.
    #[error("integrity failure for {path}: {reason}")]
    Integrity { path: String, reason: String },

    /// Unsupported artifact version.
    #[error("unsupported {kind} version {found} (expected {expected})")]
    Version {
        kind: String,
        found: u32,
        expected: u32,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
