//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any part of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A modality schema is malformed (empty, duplicate names, bad dims, M < 2).
    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Input data violates a precondition (empty dataset, bad labels, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Array dimensions do not match the declared schema or parameters.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite activations were produced during a forward pass.
    #[error("numeric failure at layer {layer}: {detail}")]
    Numeric { layer: usize, detail: String },

    /// A caller-facing contract was violated (e.g. non-unit embeddings).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A checkpoint does not match the active configuration.
    #[error("config/checkpoint mismatch in fields: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),

    /// Averaging the available embeddings produced a (near-)zero vector.
    #[error("degenerate fusion: mean of available embeddings has no direction")]
    DegenerateFusion,

    /// A dataset or file could not be loaded.
    #[error("load error: {0}")]
    Load(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code contract: 0 success, 2 config error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidSchema(_) | Error::ConfigMismatch(_) => 2,
            Error::Numeric { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
