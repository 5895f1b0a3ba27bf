//! Scalar abstraction and points on the Riemann sphere.
//!
//! All numerical code is written against [`Scalar`]: nalgebra's `RealField`
//! (which makes `Complex<T>` a `ComplexField`, so LU/QR/SVD work) plus
//! `FromPrimitive` so tolerances written as `f64` literals can be lifted into
//! the working type.

use nalgebra::{ComplexField, RealField};
use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the crate is generic over. `f32` and `f64` qualify.
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy + Default {}

impl<T> Scalar for T where T: RealField + FromPrimitive + ToPrimitive + Copy + Default {}

/// Lifts an `f64` constant into the scalar type.
///
/// Panics if the constant is not representable; tolerances and small integer
/// constants always are.
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must be representable in the scalar type")
}

/// Complex number from `f64` parts.
pub fn cx<T: Scalar>(re: f64, im: f64) -> Complex<T> {
    Complex::new(real(re), real(im))
}

/// |z| without requiring `num_traits::Float` on `T`.
pub fn cabs<T: Scalar>(z: Complex<T>) -> T {
    ComplexField::modulus(z)
}

/// Downcast to `f64` for error payloads and reports.
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Lexicographic order on (re, im). Total order used to freeze the critical
/// point ordering; `NaN` sorts last so broken data is at least deterministic.
pub fn lex_cmp<T: Scalar>(a: &Complex<T>, b: &Complex<T>) -> std::cmp::Ordering {
    let key = |z: &Complex<T>| (z.re, z.im);
    key(a).partial_cmp(&key(b)).unwrap_or(std::cmp::Ordering::Greater)
}

/// Point on the Riemann sphere: a finite complex number or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpherePoint<T: Scalar> {
    Finite(Complex<T>),
    Infinity,
}

impl<T: Scalar> SpherePoint<T> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, SpherePoint::Infinity)
    }

    pub fn finite(&self) -> Option<Complex<T>> {
        match self {
            SpherePoint::Finite(z) => Some(*z),
            SpherePoint::Infinity => None,
        }
    }

    /// Chordal distance on the sphere, normalized to take values in [0, 2].
    pub fn chordal(&self, other: &SpherePoint<T>) -> T {
        let two = real::<T>(2.0);
        let lift = |z: &Complex<T>| (T::one() + z.norm_sqr()).sqrt();
        match (self, other) {
            (SpherePoint::Finite(a), SpherePoint::Finite(b)) => {
                two * cabs(a - b) / (lift(a) * lift(b))
            }
            (SpherePoint::Finite(a), SpherePoint::Infinity)
            | (SpherePoint::Infinity, SpherePoint::Finite(a)) => two / lift(a),
            (SpherePoint::Infinity, SpherePoint::Infinity) => T::zero(),
        }
    }
}

impl<T: Scalar> From<Complex<T>> for SpherePoint<T> {
    fn from(z: Complex<T>) -> Self {
        SpherePoint::Finite(z)
    }
}

impl<T: Scalar> std::fmt::Display for SpherePoint<T>
where
    T: std::fmt::Display,
{
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpherePoint::Finite(z) => write!(f, "{}", z),
            SpherePoint::Infinity => write!(f, "inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chordal_matches_closed_forms() {
        let o: SpherePoint<f64> = SpherePoint::Finite(cx(0.0, 0.0));
        let inf = SpherePoint::Infinity;
        // d(0, inf) = 2 and d(0, 1) = 2/sqrt(2) = sqrt(2).
        assert!((o.chordal(&inf) - 2.0).abs() < 1e-15);
        let one = SpherePoint::Finite(cx(1.0, 0.0));
        assert!((o.chordal(&one) - 2.0_f64.sqrt()).abs() < 1e-15);
        assert_eq!(inf.chordal(&SpherePoint::Infinity), 0.0);
    }

    #[test]
    fn lex_order_is_total_on_grid() {
        let pts: Vec<num_complex::Complex<f64>> =
            vec![cx(0.0, 1.0), cx(-1.0, 0.0), cx(0.0, -1.0), cx(1.0, 0.0)];
        let mut sorted = pts.clone();
        sorted.sort_by(lex_cmp);
        assert_eq!(sorted, vec![cx(-1.0, 0.0), cx(0.0, -1.0), cx(0.0, 1.0), cx(1.0, 0.0)]);
    }
}
