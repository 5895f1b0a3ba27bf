//! Numerical laboratory for critical orbits of polynomials and rational maps.
//!
//! The crate computes the objects that control first-order perturbations of
//! critical orbits inside natural parameter families:
//!
//! * monic centered polynomial families and rational families fixing infinity,
//!   with critical values as local coordinates (`polymap`, `ratmap`);
//! * orbit traces, summability diagnostics and similarity series (`orbit`);
//! * transfer-operator (Ruelle) identities used to cross-check the series
//!   against resolvent-type functional equations (`ruelle`);
//! * similarity matrices, their singular spectra and rank verdicts, optionally
//!   extended by multiplier derivatives of periodic orbits (`transversality`).
//!
//! Everything is generic over the real scalar through [`Scalar`] (nalgebra's
//! `RealField` plus conversion from `f64` constants); `f64` is the intended
//! working type and the crate root exports concrete aliases for it. An
//! extended-precision scalar only needs a `RealField` implementation.

pub mod error;
pub mod newton;
pub mod orbit;
pub mod poly;
pub mod polymap;
pub mod probes;
pub mod ratmap;
pub mod roots;
pub mod ruelle;
pub mod scalar;
pub mod svd;
pub mod transversality;

pub use error::Error;
pub use scalar::{cx, real, Scalar, SpherePoint};

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Complex double-precision scalar, the default working type.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex polynomial over `f64`.
pub type ComplexPoly64 = poly::ComplexPoly<f64>;

/// Monic centered polynomial over `f64`.
pub type PolyMap64 = polymap::PolyMap<f64>;

/// Rational family member over `f64`.
pub type RationalMap64 = ratmap::RationalMap<f64>;

/// Either family over `f64`.
pub type Map64 = orbit::Map<f64>;

/// Orbit trace over `f64`.
pub type OrbitTrace64 = orbit::OrbitTrace<f64>;

pub type TransversalityMatrix64 = transversality::TransversalityMatrix<f64>;
