use thiserror::Error;

/// Errors surfaced by construction, inversion and estimation routines.
#[derive(Debug, Clone, Error)]
pub enum PhdynError {
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("newton inverse did not converge after {iters} iterations (residual {residual:.3e})")]
    NewtonDiverged { iters: u32, residual: f64 },

    #[error("construction rejected: {0}")]
    ConstructionRejected(String),

    #[error("splitting frame unreliable (residual {residual:.3e} > {tol:.1e})")]
    UnreliableFrame { residual: f64, tol: f64 },

    #[error("partial hyperbolicity chain violated at sample point {point:?}: {detail}")]
    ChainViolation { point: [f64; 4], detail: String },

    #[error("histogram grids do not match ({0} vs {1})")]
    GridMismatch(String, String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PhdynError>;
