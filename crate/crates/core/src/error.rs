use thiserror::Error;

/// Errors shared by the engine, packing, training and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    /// Slot counts of two registers (or a register and an expected length)
    /// do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A multiplication was requested on a ciphertext whose remaining level
    /// budget cannot absorb it. The modulus chain is too short for the
    /// circuit as configured.
    #[error("depth budget exhausted: {needed} level(s) needed, {available} available")]
    DepthBudget { needed: u32, available: u32 },

    /// Depth exhaustion during training, annotated with where it happened.
    #[error(
        "depth budget exhausted in epoch {epoch}, batch {batch}: {needed} level(s) needed, \
         {available} available"
    )]
    DepthBudgetAt {
        epoch: usize,
        batch: usize,
        needed: u32,
        available: u32,
    },

    /// An operation received a plaintext register where a ciphertext was
    /// required, or the other way around.
    #[error("register kind mismatch: expected {expected}")]
    Kind { expected: &'static str },

    /// A packed-matrix operation received the wrong layout or orientation.
    #[error("layout mismatch: expected {expected}, got {got}")]
    Layout {
        expected: &'static str,
        got: &'static str,
    },

    /// A shape is outside what the requested operation supports.
    #[error("unsupported shape: {0}")]
    Shape(String),

    /// Backward pass requested before a forward pass populated its caches.
    #[error("backward called before forward")]
    MissingForward,

    /// Invalid run configuration (dimensions, hyperparameters, flags).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or missing input data.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
