use thiserror::Error;

/// Errors raised by domain queries, coefficient evaluation and the checkers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point (t={t}, x={x:?}) lies outside the domain")]
    OutsideDomain { t: f64, x: Vec<f64> },

    #[error("finite-difference stencil of width {required} needs more clearance than the {available} available")]
    Stencil { required: f64, available: f64 },

    #[error("singular coefficient at (t={t}, x={x:?})")]
    Singularity { t: f64, x: Vec<f64> },

    #[error("diffusion matrix is not invertible at (t={t}, x={x:?})")]
    SingularDiffusion { t: f64, x: Vec<f64> },

    #[error("no grid point falls inside the region")]
    EmptyRegion,

    #[error("parameter out of range: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, SdeError>;
