//! Dense complex polynomials.
//!
//! Coefficients are stored highest degree first, so `coeffs[0]` is the leading
//! coefficient and Horner evaluation walks the vector left to right. The zero
//! polynomial is represented as a single zero coefficient.

use crate::scalar::{cabs, real, Scalar};
use nalgebra::DMatrix;
use num_complex::Complex;
use num_traits::{One, Zero};

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPoly<T: Scalar> {
    coeffs: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexPoly<T> {
    /// Builds a polynomial from coefficients, highest degree first.
    /// Exact leading zeros are trimmed.
    pub fn new(coeffs: Vec<Complex<T>>) -> Self {
        let mut p = ComplexPoly { coeffs };
        p.trim_exact();
        p
    }

    pub fn zero() -> Self {
        ComplexPoly { coeffs: vec![Complex::zero()] }
    }

    pub fn constant(c: Complex<T>) -> Self {
        ComplexPoly { coeffs: vec![c] }
    }

    pub fn one() -> Self {
        ComplexPoly::constant(Complex::one())
    }

    /// c * z^n
    pub fn monomial(c: Complex<T>, n: usize) -> Self {
        let mut coeffs = vec![Complex::zero(); n + 1];
        coeffs[0] = c;
        ComplexPoly::new(coeffs)
    }

    /// Monic polynomial with the given roots (with multiplicity).
    pub fn from_roots(roots: &[Complex<T>]) -> Self {
        let mut p = ComplexPoly::one();
        for &r in roots {
            p = p.mul(&ComplexPoly::new(vec![Complex::one(), -r]));
        }
        p
    }

    fn trim_exact(&mut self) {
        while self.coeffs.len() > 1 && self.coeffs[0] == Complex::zero() {
            self.coeffs.remove(0);
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(Complex::zero());
        }
    }

    /// Drops leading coefficients of magnitude below `eps` (relative to the
    /// largest coefficient). Used after Moebius conjugations where the top
    /// coefficient cancels analytically but not in floating point.
    pub fn trim_leading(&self, eps: T) -> Self {
        let scale = self.coeffs.iter().map(|c| cabs(*c)).fold(T::zero(), T::max);
        let mut coeffs = self.coeffs.clone();
        while coeffs.len() > 1 && cabs(coeffs[0]) <= eps * scale {
            coeffs.remove(0);
        }
        ComplexPoly { coeffs }
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> Complex<T> {
        self.coeffs[0]
    }

    /// Coefficient of z^k (zero when k exceeds the degree).
    pub fn coeff(&self, k: usize) -> Complex<T> {
        if k > self.degree() {
            Complex::zero()
        } else {
            self.coeffs[self.degree() - k]
        }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == Complex::zero())
    }

    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        let mut acc = Complex::zero();
        for &c in &self.coeffs {
            acc = acc * z + c;
        }
        acc
    }

    /// Sum of |a_k| |z|^k; `eps * eval_scale(z)` is the backward-error floor
    /// for `eval(z)` and the natural residual scale for root acceptance.
    pub fn eval_scale(&self, z: Complex<T>) -> T {
        let az = cabs(z);
        let mut acc = T::zero();
        for &c in &self.coeffs {
            acc = acc * az + cabs(c);
        }
        acc
    }

    pub fn derivative(&self) -> Self {
        let n = self.degree();
        if n == 0 {
            return ComplexPoly::zero();
        }
        let coeffs = self
            .coeffs
            .iter()
            .take(n)
            .enumerate()
            .map(|(i, &c)| c * Complex::new(real::<T>((n - i) as f64), T::zero()))
            .collect();
        ComplexPoly::new(coeffs)
    }

    /// Antiderivative with zero constant term.
    pub fn antiderivative(&self) -> Self {
        let n = self.degree();
        let mut coeffs = Vec::with_capacity(n + 2);
        for (i, &c) in self.coeffs.iter().enumerate() {
            let k = (n - i + 1) as f64;
            coeffs.push(c / Complex::new(real::<T>(k), T::zero()));
        }
        coeffs.push(Complex::zero());
        ComplexPoly::new(coeffs)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.degree().max(other.degree());
        let coeffs = (0..=n)
            .rev()
            .map(|k| self.coeff(k) + other.coeff(k))
            .collect();
        ComplexPoly::new(coeffs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-Complex::one()))
    }

    pub fn scale(&self, c: Complex<T>) -> Self {
        ComplexPoly::new(self.coeffs.iter().map(|&a| a * c).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return ComplexPoly::zero();
        }
        let mut coeffs = vec![Complex::zero(); self.degree() + other.degree() + 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        ComplexPoly::new(coeffs)
    }

    /// Quotient and remainder of division by (z - c) (synthetic division).
    pub fn divide_linear(&self, c: Complex<T>) -> (Self, Complex<T>) {
        if self.degree() == 0 {
            return (ComplexPoly::zero(), self.coeffs[0]);
        }
        let mut q = Vec::with_capacity(self.degree());
        let mut acc = Complex::zero();
        for &a in &self.coeffs {
            acc = acc * c + a;
            q.push(acc);
        }
        let rem = q.pop().expect("degree >= 1");
        (ComplexPoly { coeffs: q }, rem)
    }

    /// Long division: self = q * div + r with deg r < deg div.
    pub fn div_rem(&self, div: &Self) -> (Self, Self) {
        assert!(!div.is_zero(), "division by the zero polynomial");
        if self.degree() < div.degree() {
            return (ComplexPoly::zero(), self.clone());
        }
        let mut rem = self.coeffs.clone();
        let n = self.degree();
        let m = div.degree();
        let lead = div.coeffs[0];
        let mut q = vec![Complex::zero(); n - m + 1];
        for k in 0..=(n - m) {
            let factor = rem[k] / lead;
            q[k] = factor;
            for j in 0..=m {
                let t = factor * div.coeffs[j];
                rem[k + j] -= t;
            }
        }
        let r = ComplexPoly::new(rem[(n - m + 1)..].to_vec());
        (ComplexPoly::new(q), r)
    }

    /// First `count` Taylor coefficients of the expansion at `c`
    /// (value, first derivative / 1!, second / 2!, ...).
    pub fn taylor_at(&self, c: Complex<T>, count: usize) -> Vec<Complex<T>> {
        let mut out = Vec::with_capacity(count);
        let mut cur = self.clone();
        for _ in 0..count {
            let (q, r) = cur.divide_linear(c);
            out.push(r);
            cur = q;
            if cur.is_zero() && out.len() < count {
                out.resize(count, Complex::zero());
                break;
            }
        }
        out
    }

    /// Divides out (z - c)^m, returning the quotient and the largest remainder
    /// magnitude encountered (which should be at roundoff level when c really
    /// is an m-fold root).
    pub fn deflate_root(&self, c: Complex<T>, m: usize) -> (Self, T) {
        let mut cur = self.clone();
        let mut worst = T::zero();
        for _ in 0..m {
            let (q, r) = cur.divide_linear(c);
            worst = worst.max(cabs(r));
            cur = q;
        }
        (cur, worst)
    }

    /// Composition with an affine argument: p(a z + b).
    pub fn compose_affine(&self, a: Complex<T>, b: Complex<T>) -> Self {
        let mut acc = ComplexPoly::zero();
        let arg = ComplexPoly::new(vec![a, b]);
        for &c in &self.coeffs {
            acc = acc.mul(&arg).add(&ComplexPoly::constant(c));
        }
        acc
    }

    /// self(inner(z)), Horner in the inner polynomial. Degrees multiply, so
    /// iterated composition grows fast; callers cap the depth.
    pub fn compose(&self, inner: &Self) -> Self {
        let mut acc = ComplexPoly::zero();
        for &c in &self.coeffs {
            acc = acc.mul(inner).add(&ComplexPoly::constant(c));
        }
        acc
    }

    /// Resultant of self and other via the Sylvester matrix determinant.
    pub fn resultant(&self, other: &Self) -> Complex<T> {
        let n = self.degree();
        let m = other.degree();
        if self.is_zero() || other.is_zero() {
            return Complex::zero();
        }
        if n == 0 {
            return self.coeffs[0].powu(m as u32);
        }
        if m == 0 {
            return other.coeffs[0].powu(n as u32);
        }
        let size = n + m;
        let mut s = DMatrix::<Complex<T>>::zeros(size, size);
        for row in 0..m {
            for (j, &c) in self.coeffs.iter().enumerate() {
                s[(row, row + j)] = c;
            }
        }
        for row in 0..n {
            for (j, &c) in other.coeffs.iter().enumerate() {
                s[(m + row, row + j)] = c;
            }
        }
        s.lu().determinant()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;

    fn p64(coeffs: &[(f64, f64)]) -> ComplexPoly<f64> {
        ComplexPoly::new(coeffs.iter().map(|&(re, im)| cx(re, im)).collect())
    }

    #[test]
    fn eval_and_derivative() {
        // p = z^3 - 3z, p' = 3z^2 - 3
        let p = p64(&[(1.0, 0.0), (0.0, 0.0), (-3.0, 0.0), (0.0, 0.0)]);
        assert_eq!(p.eval(cx(2.0, 0.0)), cx(2.0, 0.0));
        let dp = p.derivative();
        assert_eq!(dp.coeffs(), &[cx(3.0, 0.0), cx(0.0, 0.0), cx(-3.0, 0.0)]);
        assert_eq!(dp.eval(cx(1.0, 0.0)), cx(0.0, 0.0));
    }

    #[test]
    fn antiderivative_inverts_derivative() {
        let p = p64(&[(2.0, 1.0), (0.0, -1.0), (3.0, 0.0)]);
        let back = p.antiderivative().derivative();
        for (a, b) in back.coeffs().iter().zip(p.coeffs()) {
            assert!(cabs(a - b) < 1e-15);
        }
    }

    #[test]
    fn from_roots_expands() {
        let p = ComplexPoly::<f64>::from_roots(&[cx(1.0, 0.0), cx(-1.0, 0.0), cx(0.0, 0.0)]);
        // (z-1)(z+1)z = z^3 - z
        assert_eq!(p.coeffs(), &[cx(1.0, 0.0), cx(0.0, 0.0), cx(-1.0, 0.0), cx(0.0, 0.0)]);
    }

    #[test]
    fn synthetic_division_recovers_factors() {
        let p = ComplexPoly::<f64>::from_roots(&[cx(2.0, 0.0), cx(0.0, 1.0)]);
        let (q, r) = p.divide_linear(cx(2.0, 0.0));
        assert!(cabs(r) < 1e-15);
        assert!(cabs(q.eval(cx(0.0, 1.0))) < 1e-15);
    }

    #[test]
    fn div_rem_roundtrip() {
        let a = p64(&[(1.0, 0.0), (2.0, -1.0), (0.0, 0.0), (4.0, 4.0)]);
        let b = p64(&[(1.0, 0.0), (-1.0, 1.0)]);
        let (q, r) = a.div_rem(&b);
        let back = q.mul(&b).add(&r);
        for k in 0..=a.degree() {
            assert!(cabs(back.coeff(k) - a.coeff(k)) < 1e-13);
        }
        assert!(r.degree() < b.degree());
    }

    #[test]
    fn taylor_coefficients_match_shift() {
        // p(z) = z^2 at c = 1: (z-1)^2 + 2(z-1) + 1
        let p = p64(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        let t = p.taylor_at(cx(1.0, 0.0), 3);
        assert!(cabs(t[0] - cx(1.0, 0.0)) < 1e-15);
        assert!(cabs(t[1] - cx(2.0, 0.0)) < 1e-15);
        assert!(cabs(t[2] - cx(1.0, 0.0)) < 1e-15);
    }

    #[test]
    fn compose_affine_matches_pointwise() {
        let p = p64(&[(1.0, 0.0), (-2.0, 0.5), (0.0, 3.0)]);
        let (a, b) = (cx(0.5, 0.25), cx(-1.0, 2.0));
        let q = p.compose_affine(a, b);
        for t in [-1.5, 0.0, 0.7, 2.0] {
            let z = cx(t, -t * 0.3);
            assert!(cabs(q.eval(z) - p.eval(a * z + b)) < 1e-12);
        }
    }

    #[test]
    fn compose_matches_pointwise_and_degrees_multiply() {
        let p = p64(&[(1.0, 0.0), (-2.0, 0.5), (0.0, 3.0)]);
        let q = p64(&[(2.0, -1.0), (0.0, 0.0), (1.0, 1.0)]);
        let r = p.compose(&q);
        assert_eq!(r.degree(), p.degree() * q.degree());
        for t in [-1.5, 0.0, 0.7, 2.0] {
            let z = cx(t, t * 0.4);
            assert!(cabs(r.eval(z) - p.eval(q.eval(z))) < 1e-10);
        }
    }

    #[test]
    fn resultant_detects_shared_roots() {
        let a = ComplexPoly::<f64>::from_roots(&[cx(1.0, 0.0), cx(2.0, 0.0)]);
        let b = ComplexPoly::<f64>::from_roots(&[cx(2.0, 0.0), cx(-3.0, 0.0)]);
        assert!(cabs(a.resultant(&b)) < 1e-12);
        let c = ComplexPoly::<f64>::from_roots(&[cx(0.0, 1.0)]);
        // res((z-1)(z-2), z-i) = (i-1)(i-2)
        let expect = (cx::<f64>(0.0, 1.0) - cx(1.0, 0.0)) * (cx::<f64>(0.0, 1.0) - cx(2.0, 0.0));
        assert!(cabs(a.resultant(&c) - expect) < 1e-12);
    }
}
