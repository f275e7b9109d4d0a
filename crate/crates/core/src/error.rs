use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid sparsity pattern: {0}")]
    InvalidPattern(String),

    /// The source pattern is already sparse enough for direct `M:N`
    /// execution; callers should take the identity path.
    #[error("pattern {z}:{l} is already {hw_m}:{hw_n}-compliant by density; no decomposition needed")]
    AlreadyCompliant { z: usize, l: usize, hw_m: usize, hw_n: usize },

    #[error("{windows} windows hold at most {capacity} nonzeros, fewer than the {z} required")]
    InsufficientCapacity { windows: usize, capacity: usize, z: usize },

    #[error("a block of length {l} cannot be tiled by {windows} windows of width {hw_n} at an integral stride")]
    NonIntegralWindowCount { l: usize, windows: usize, hw_n: usize },

    #[error("row {row}, block {block} has {nnz} nonzeros, more than the {max} allowed")]
    NotCompliant { row: usize, block: usize, nnz: usize, max: usize },

    /// Greedy allocation left a nonzero unassigned. Only reachable for plans
    /// whose stride exceeds the per-window capacity.
    #[error("row {row}, block {block}: source index {index} could not be placed in any window")]
    Unplaced { row: usize, block: usize, index: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("malformed metadata in row {row}, window {window}: {reason}")]
    MalformedMetadata { row: usize, window: usize, reason: String },

    #[error("baseline speedup must be positive")]
    ZeroBaseline,
}
