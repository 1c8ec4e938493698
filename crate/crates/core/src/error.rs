//! Error type shared across the engine.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A network or block configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// The requested operation does not apply to this configuration's mode,
    /// e.g. streaming a network that still pads its temporal convolutions.
    #[error("mode mismatch: {0}")]
    Mode(String),

    /// A serialized container or stream violates its format contract.
    #[error("format error: {0}")]
    Format(String),

    /// A tensor required by the configuration is absent from the weight store.
    #[error("missing tensor '{name}'")]
    MissingTensor { name: String },

    /// A stored tensor exists but its shape disagrees with the configuration.
    #[error("tensor '{name}': expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
