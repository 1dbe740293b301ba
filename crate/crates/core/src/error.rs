use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed model document: {0}")]
    Parse(#[from] serde_json::Error),

    /// A model field violates one of its invariants.
    #[error("invalid `{field}`: {detail}")]
    Validation { field: &'static str, detail: String },

    #[error("invalid parameter `{name}`: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("X-marginal of the joint measure differs from the state measure by {deviation:e}")]
    MarginalMismatch { deviation: f64 },

    #[error("{what} has {size} elements, above the cap of {cap}")]
    CapExceeded { what: &'static str, size: u128, cap: u64 },

    #[error("joint measure is not admissible: {0}")]
    Inadmissible(String),

    #[error("problem too large for exhaustive evaluation: {0}")]
    Intractable(String),

    /// A computed quantity violates a property that must hold exactly.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn validation(field: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            field,
            detail: detail.into(),
        }
    }

    pub(crate) fn parameter(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            detail: detail.into(),
        }
    }
}
