//! Shared error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("variable index {index} out of range for {nvars} variables")]
    IndexOutOfRange { index: usize, nvars: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("not a fixed point: |f(x*)| = {residual:.3e} exceeds tolerance {tol:.3e}")]
    NotAFixedPoint { residual: f64, tol: f64 },

    #[error("weight matrix must be symmetric positive definite: {0}")]
    BadWeight(String),

    #[error("invalid symmetry data: {0}")]
    BadSymmetry(String),

    #[error("SOS assembly failed: {0}")]
    Assembly(String),

    #[error("SDP is structurally inconsistent: {0}")]
    BadSdp(String),

    #[error("solution shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("certificate/program basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("non-finite state encountered during integration at t = {0}")]
    NonFiniteState(f64),

    #[error("system is not a separable Hamiltonian with the declared (q,p) split: {0}")]
    NotSeparable(String),

    #[error("no admissible root on the energy curve at x1 = {0}")]
    NoAdmissibleRoot(f64),

    #[error("shooting did not converge: best residual {residual:.3e} after {evals} evaluations")]
    ShootingStalled {
        residual: f64,
        evals: usize,
        best: Box<crate::trajectory::Orbit>,
    },

    #[error("orbit closure residual {residual:.3e} too large for a meaningful monodromy (need < {required:.0e})")]
    OrbitResidualTooLarge { residual: f64, required: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Other(String),
}
