//! Singular value spectra with a relative rank cutoff.

use crate::scalar::{Scalar};
use nalgebra::DMatrix;
use num_complex::Complex;

/// Singular values in descending order plus the induced numerical rank.
#[derive(Debug, Clone)]
pub struct SingularSpectrum<T: Scalar> {
    pub values: Vec<T>,
    /// Number of values exceeding `tol * values[0]`.
    pub rank: usize,
    pub tol: T,
}

impl<T: Scalar> SingularSpectrum<T> {
    pub fn smallest(&self) -> Option<T> {
        self.values.last().copied()
    }
}

/// Full singular spectrum of a complex matrix. `rel_tol` is the rank cutoff
/// relative to the largest singular value.
pub fn singular_values<T: Scalar>(m: &DMatrix<Complex<T>>, rel_tol: T) -> SingularSpectrum<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return SingularSpectrum { values: vec![], rank: 0, tol: rel_tol };
    }
    let svd = m.clone().svd(false, false);
    let mut values: Vec<T> = svd.singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let max = values.first().copied().unwrap_or_else(T::zero);
    let rank = if max == T::zero() {
        0
    } else {
        values.iter().filter(|&&v| v > rel_tol * max).count()
    };
    SingularSpectrum { values, rank, tol: rel_tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{cabs, cx, real};
    use nalgebra::DVector;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_spectrum() {
        let m = DMatrix::<Complex<f64>>::identity(3, 3);
        let s = singular_values(&m, 1e-10);
        assert_eq!(s.values.len(), 3);
        assert!(s.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert_eq!(s.rank, 3);
    }

    #[test]
    fn symmetric_two_by_two() {
        // [[15/16, 3/16], [3/16, 15/16]] has spectrum {9/8, 3/4}.
        let m = DMatrix::from_row_slice(2, 2, &[
            cx::<f64>(15.0 / 16.0, 0.0),
            cx(3.0 / 16.0, 0.0),
            cx(3.0 / 16.0, 0.0),
            cx(15.0 / 16.0, 0.0),
        ]);
        let s = singular_values(&m, 1e-10);
        assert!((s.values[0] - 1.125).abs() < 1e-12);
        assert!((s.values[1] - 0.75).abs() < 1e-12);
        assert_eq!(s.rank, 2);
    }

    #[test]
    fn zero_and_empty_matrices() {
        let z = DMatrix::<Complex<f64>>::zeros(2, 3);
        let s = singular_values(&z, 1e-10);
        assert_eq!(s.rank, 0);
        let e = DMatrix::<Complex<f64>>::zeros(0, 0);
        let s = singular_values(&e, 1e-10);
        assert!(s.values.is_empty());
        assert_eq!(s.rank, 0);
    }

    #[test]
    fn rank_cutoff_is_relative() {
        let m = DMatrix::from_row_slice(2, 2, &[
            cx(1.0, 0.0),
            cx(0.0, 0.0),
            cx(0.0, 0.0),
            cx(1e-13, 0.0),
        ]);
        assert_eq!(singular_values(&m, 1e-10).rank, 1);
        assert_eq!(singular_values(&m, 1e-15).rank, 2);
    }

    #[test]
    fn unitary_invariance_under_householder_reflectors() {
        // Left-multiplying by I - 2 u u* / |u|^2 must not move the spectrum.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = 4;
            let a = DMatrix::<Complex<f64>>::from_fn(n, n, |_, _| {
                cx(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let u = DVector::<Complex<f64>>::from_fn(n, |_, _| {
                cx(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let norm2 = u.iter().map(|z| z.norm_sqr()).sum::<f64>();
            let mut h = DMatrix::<Complex<f64>>::identity(n, n);
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] -= u[i] * u[j].conj() * real::<f64>(2.0 / norm2);
                }
            }
            let sa = singular_values(&a, 1e-10);
            let sha = singular_values(&(h.clone() * &a), 1e-10);
            for (x, y) in sa.values.iter().zip(sha.values.iter()) {
                assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
            }
            // Sanity: H really is unitary.
            let hh = &h * h.adjoint();
            for i in 0..n {
                for j in 0..n {
                    let expect = if i == j { cx(1.0, 0.0) } else { cx(0.0, 0.0) };
                    assert!(cabs(hh[(i, j)] - expect) < 1e-12);
                }
            }
        }
    }
}
