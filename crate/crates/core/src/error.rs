//! Error type shared by every module.
//!
//! Magnitudes carried in error payloads are downcast to `f64`; they are
//! diagnostic only and never fed back into computations.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An iteration exhausted its budget before the residual passed tolerance.
    #[error("{what}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Jacobian (or square solve matrix) was singular to working precision.
    #[error("singular Jacobian in {what}")]
    SingularJacobian { what: &'static str },

    /// A structured linear system lost rank, typically a multiplier hitting 1.
    #[error("singular linear system in {what}: {detail}")]
    SingularSystem { what: &'static str, detail: String },

    /// Critical points collided or separated during a chart inversion, so the
    /// requested multiplicity pattern no longer holds.
    #[error("multiplicity pattern broken: {detail}")]
    MultiplicityBroken { detail: String },

    /// A fixed-point multiplier sits too close to 1 to classify reliably.
    #[error("ambiguous classification: multiplier within {band:.1e} of 1 (|rho-1| = {distance:.3e})")]
    AmbiguousClassification { distance: f64, band: f64 },

    /// An evaluation point collided with a critical value, where preimages
    /// degenerate.
    #[error("point within {tol:.1e} of critical value {value}")]
    CriticalValueCollision { value: String, tol: f64 },

    /// A Moebius probe sent infinity onto (or too close to) a critical orbit.
    #[error("Moebius image of infinity within {distance:.3e} of a critical orbit point (threshold {threshold:.1e})")]
    OrbitCollision { distance: f64, threshold: f64 },

    /// A series failed its convergence test.
    #[error("divergence detected in {what}: {detail}")]
    DivergenceDetected { what: &'static str, detail: String },

    /// Tail bounds dominate the smallest singular value; no rank verdict.
    #[error("rank verdict inconclusive: smallest singular value {sigma_min:.3e} vs tail budget {tail_budget:.3e}")]
    Inconclusive { sigma_min: f64, tail_budget: f64 },

    /// Structurally invalid input (degree bounds, malformed coefficients, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
