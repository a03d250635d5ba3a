use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A weight matrix, state vector, or spike vector has the wrong shape.
    #[error("dimension mismatch: {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Membrane potentials or currents left the finite range during a pass.
    #[error("numeric divergence at forward step {step}: {detail}")]
    NumericDivergence { step: usize, detail: String },

    #[error("unknown preset `{0}` (expected one of: barrier_layer, timer_core, async)")]
    UnknownPreset(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An event violates the declared sensor geometry or channel range.
    #[error("event geometry violation: {0}")]
    Geometry(String),

    #[error("checkpoint/topology mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config file error: {0}")]
    Toml(String),
}

pub type Result<T> = std::result::Result<T, Error>;
