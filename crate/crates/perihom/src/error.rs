use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or precondition violation.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Mismatched dimensions, system sizes or field layouts.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A coefficient failed its coercivity check.
    #[error("non-coercive coefficient: sampled quadratic-form minimum {min:.6e} <= 0")]
    NonCoercive { min: f64 },

    /// Mesh too coarse for the requested oscillation scale.
    #[error("mesh too coarse for eps={eps}: h={h:.3e} exceeds eps/{floor}; refine the mesh or set the override flag")]
    ResolutionFloor { h: f64, eps: f64, floor: f64 },

    /// Iterative solver failed to converge.
    #[error("{solver} did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        iters: usize,
        residual: f64,
    },

    /// Matrix not usable by the requested factorization or solver.
    #[error("linear solver breakdown: {0}")]
    Breakdown(String),

    /// Frozen-Jacobian iteration lost contraction, typically eps too large.
    #[error("frozen-Jacobian iteration is not contractive (q_k >= 1 for {consecutive} steps or residual growth); eps may be too large")]
    NonContractive { consecutive: usize },

    /// Configuration file failed schema validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
