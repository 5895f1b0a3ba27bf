//! Monic centered polynomials with a fixed critical multiplicity pattern.
//!
//! A map is stored as f(z) = z^d + a_1 z^{d-2} + ... + a_{d-1}; the z^{d-1}
//! slot is omitted from storage so centering cannot drift. Near a base map
//! the vector of critical values is a local coordinate on the set of maps
//! sharing the base map's multiplicity pattern. `coeffs_from_critical_values`
//! inverts that coordinate by Newton's method, and `partial_derivative_poly`
//! returns the tangent polynomials p_k dual to the value slots: moving v_k
//! at unit speed moves f by p_k, to first order.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::Error;
use crate::newton::{newton_solve, NewtonOptions};
use crate::poly::ComplexPoly;
use crate::roots::find_roots;
use crate::scalar::{cabs, cx, lex_cmp, real, Scalar, SpherePoint};
use crate::Result;

/// Largest supported degree. The Hermite systems below are assembled in the
/// monomial basis, whose conditioning degrades rapidly past this point.
pub const MAX_DEGREE: usize = 12;

/// Imaginary-part budget for maps flagged as real.
const REAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PolyMap<T: Scalar> {
    degree: usize,
    /// a_1..a_{d-1} of f(z) = z^d + a_1 z^{d-2} + ... + a_{d-1}.
    coeffs: Vec<Complex<T>>,
    poly: ComplexPoly<T>,
    deriv: ComplexPoly<T>,
    real_coefficients: bool,
}

impl<T: Scalar> PolyMap<T> {
    pub fn new(degree: usize, coeffs: Vec<Complex<T>>) -> Result<Self> {
        if degree < 2 {
            return Err(Error::invalid(format!(
                "polynomial degree must be at least 2, got {degree}"
            )));
        }
        if degree > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "degree {degree} exceeds the supported range d <= {MAX_DEGREE}"
            )));
        }
        if coeffs.len() != degree - 1 {
            return Err(Error::invalid(format!(
                "degree {} map needs {} coefficients (a_1..a_{}), got {}",
                degree,
                degree - 1,
                degree - 1,
                coeffs.len()
            )));
        }
        // Expand z^d + 0*z^{d-1} + a_1 z^{d-2} + ... once, up front.
        let mut full = Vec::with_capacity(degree + 1);
        full.push(Complex::<T>::one());
        full.push(Complex::zero());
        full.extend_from_slice(&coeffs);
        let poly = ComplexPoly::new(full);
        let deriv = poly.derivative();
        Ok(PolyMap { degree, coeffs, poly, deriv, real_coefficients: false })
    }

    /// Convenience constructor from real coefficient values.
    pub fn from_real_coeffs(degree: usize, coeffs: &[f64]) -> Result<Self> {
        let cs = coeffs.iter().map(|&a| cx(a, 0.0)).collect();
        PolyMap::new(degree, cs)?.mark_real()
    }

    /// Flags the map as real, which downstream operations preserve and
    /// validate. Fails if any coefficient has imaginary part above 1e-12.
    pub fn mark_real(mut self) -> Result<Self> {
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.im.abs() > real(REAL_TOL) {
                return Err(Error::invalid(format!(
                    "coefficient a_{} has imaginary part {:e}; map is not real",
                    i + 1,
                    crate::scalar::to_f64(a.im)
                )));
            }
        }
        self.real_coefficients = true;
        Ok(self)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn is_real(&self) -> bool {
        self.real_coefficients
    }

    pub fn poly(&self) -> &ComplexPoly<T> {
        &self.poly
    }

    pub fn derivative_poly(&self) -> &ComplexPoly<T> {
        &self.deriv
    }

    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        self.poly.eval(z)
    }

    pub fn deriv(&self, z: Complex<T>) -> Complex<T> {
        self.deriv.eval(z)
    }

    /// Standard escape bound: once |z| exceeds this the orbit tends to
    /// infinity monotonically.
    pub fn escape_radius(&self) -> T {
        let sum = self.coeffs.iter().map(|a| cabs(*a)).fold(T::zero(), |s, a| s + a);
        T::one() + sum.max(real(2.0))
    }
}

/// Distinct critical points with multiplicities and critical values.
///
/// Points are sorted lexicographically by (re, im) and the order is frozen;
/// every row/column index downstream refers to this order. For rational maps
/// the points with finite critical value come first (see `ratmap`), and
/// `values` may contain infinity; for polynomials all values are finite.
#[derive(Debug, Clone)]
pub struct CriticalProfile<T: Scalar> {
    pub points: Vec<Complex<T>>,
    pub multiplicities: Vec<usize>,
    pub values: Vec<SpherePoint<T>>,
}

impl<T: Scalar> CriticalProfile<T> {
    /// Number of distinct critical points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of critical points with finite critical value. Because of the
    /// finite-first ordering this is also the index where the infinite block
    /// starts.
    pub fn finite_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_infinite()).count()
    }

    /// The leading block of finite critical values (1-based callers pass
    /// j-1). Profiles keep finite-valued points first, so this is the first
    /// finite_count() slots; polynomial profiles are all-finite.
    pub fn finite_values(&self) -> Vec<Complex<T>> {
        self.values.iter().map_while(|v| v.finite()).collect()
    }

    /// Scale used for relative comparisons: 1 + max |c_j|.
    pub fn scale(&self) -> T {
        let m = self.points.iter().map(|c| cabs(*c)).fold(T::zero(), T::max);
        T::one() + m
    }
}

/// Critical points of f as roots of f', clustered by multiplicity, with
/// values v_j = f(c_j). The multiplicities always sum to d-1.
pub fn critical_profile<T: Scalar>(f: &PolyMap<T>) -> Result<CriticalProfile<T>> {
    let roots = find_roots(f.derivative_poly(), real(1e-12))?;
    let mut clusters: Vec<(Complex<T>, usize)> =
        roots.clusters.iter().map(|c| (c.center, c.multiplicity)).collect();
    clusters.sort_by(|a, b| lex_cmp(&a.0, &b.0));

    if f.is_real() {
        for (c, _) in &clusters {
            if c.im.abs() > real(REAL_TOL) {
                return Err(Error::invalid(format!(
                    "map flagged real has a critical point with imaginary part {:e}",
                    crate::scalar::to_f64(c.im)
                )));
            }
        }
    }

    let points: Vec<_> = clusters.iter().map(|&(c, _)| c).collect();
    let multiplicities: Vec<_> = clusters.iter().map(|&(_, m)| m).collect();
    let values = points.iter().map(|&c| SpherePoint::Finite(f.eval(c))).collect();
    debug_assert_eq!(multiplicities.iter().sum::<usize>(), f.degree() - 1);
    Ok(CriticalProfile { points, multiplicities, values })
}

/// Inverts the critical-value coordinate near `f0`: finds the map g with the
/// same multiplicity pattern whose critical values (in the profile order of
/// `f0`) equal `target`.
///
/// The unknowns are the continued critical points c_1..c_p and the constant
/// term kappa; the derivative is reconstructed as d * prod (z-c_i)^{m_i}, so
/// the multiplicity pattern holds by construction along the whole Newton
/// path. Centering is one extra real equation sum m_i c_i = 0 (that sum is
/// the z^{d-2} coefficient of g'/d up to sign).
pub fn coeffs_from_critical_values<T: Scalar>(
    f0: &PolyMap<T>,
    target: &[Complex<T>],
    tol: T,
) -> Result<PolyMap<T>> {
    let profile = critical_profile(f0)?;
    let p = profile.len();
    if target.len() != p {
        return Err(Error::invalid(format!(
            "target has {} values but the map has {} distinct critical points",
            target.len(),
            p
        )));
    }
    let mults = profile.multiplicities.clone();
    let d = f0.degree();
    let dc = cx::<T>(d as f64, 0.0);

    // State layout: x = (c_1, .., c_p, kappa).
    let mut x0 = DVector::from_element(p + 1, Complex::<T>::zero());
    for (i, &c) in profile.points.iter().enumerate() {
        x0[i] = c;
    }
    x0[p] = f0.eval(Complex::zero());

    let body = |x: &DVector<Complex<T>>| -> ComplexPoly<T> {
        // g' expanded from the current critical points.
        let mut gp = ComplexPoly::constant(dc);
        for (i, &m) in mults.iter().enumerate() {
            for _ in 0..m {
                gp = gp.mul(&ComplexPoly::new(vec![Complex::one(), -x[i]]));
            }
        }
        gp
    };

    let residual = |x: &DVector<Complex<T>>| -> DVector<Complex<T>> {
        let anti = body(x).antiderivative();
        let mut out = DVector::from_element(p + 1, Complex::<T>::zero());
        for j in 0..p {
            out[j] = x[p] + anti.eval(x[j]) - target[j];
        }
        for (i, &m) in mults.iter().enumerate() {
            out[p] += x[i].scale(real(m as f64));
        }
        out
    };

    let jacobian = |x: &DVector<Complex<T>>| -> DMatrix<Complex<T>> {
        let gp = body(x);
        let mut jac = DMatrix::from_element(p + 1, p + 1, Complex::<T>::zero());
        for i in 0..p {
            // d g / d c_i = antiderivative of -m_i g'/(z-c_i); the direct
            // motion of the evaluation point c_j contributes g'(c_j) = 0.
            let (quot, _) = gp.divide_linear(x[i]);
            let anti_i = quot.scale(-cx::<T>(mults[i] as f64, 0.0)).antiderivative();
            for j in 0..p {
                jac[(j, i)] = anti_i.eval(x[j]);
            }
            jac[(p, i)] = cx(mults[i] as f64, 0.0);
        }
        for j in 0..p {
            jac[(j, p)] = Complex::one();
        }
        jac
    };

    let opts = NewtonOptions { tol, ..NewtonOptions::default() };
    let out = newton_solve(residual, jacobian, x0, opts).map_err(|e| match e {
        Error::SingularJacobian { .. } => Error::SingularJacobian { what: "critical-value chart" },
        other => other,
    })?;

    // Reconstruct the coefficient vector, dropping the z^{d-1} slot (its
    // magnitude is bounded by the centering residual, already below tol).
    let g = body(&out.x).antiderivative();
    let mut coeffs = Vec::with_capacity(d - 1);
    for k in (0..=d - 2).rev() {
        coeffs.push(g.coeff(k));
    }
    coeffs[d - 2] += out.x[p];
    let mut result = PolyMap::new(d, coeffs)?;
    let target_real = target.iter().all(|v| v.im.abs() <= real(REAL_TOL));
    if f0.is_real() && target_real {
        result = result.mark_real()?;
    }

    // A collision of continued critical points means the target left the
    // locus where this multiplicity pattern is attainable.
    let check = critical_profile(&result)?;
    if check.multiplicities != mults || check.len() != p {
        return Err(Error::MultiplicityBroken {
            detail: format!(
                "multiplicities changed from {:?} to {:?} along the chart inversion",
                mults, check.multiplicities
            ),
        });
    }
    Ok(result)
}

/// Tangent polynomial dual to the k-th critical value slot (1-based).
#[derive(Debug, Clone)]
pub struct PartialDerivativePoly<T: Scalar> {
    pub k: usize,
    pub poly: ComplexPoly<T>,
}

/// Confluent Vandermonde matrix: row (j, l) holds the l-th derivative of the
/// monomials 1, z, ..., z^{dim-1} at points[j], for l = 0..mults[j]-1. Shared
/// by the polynomial and rational Hermite solves.
pub(crate) fn confluent_vandermonde<T: Scalar>(
    points: &[Complex<T>],
    mults: &[usize],
    dim: usize,
) -> DMatrix<Complex<T>> {
    let rows: usize = mults.iter().sum();
    let mut mat = DMatrix::from_element(rows, dim, Complex::<T>::zero());
    let mut row = 0;
    for (j, &c) in points.iter().enumerate() {
        for l in 0..mults[j] {
            for s in l..dim {
                // l-th derivative of z^s: s!/(s-l)! z^{s-l}.
                let mut fall = T::one();
                for q in 0..l {
                    fall *= real((s - q) as f64);
                }
                mat[(row, s)] = c.powu((s - l) as u32).scale(fall);
            }
            row += 1;
        }
    }
    mat
}

pub(crate) fn poly_from_solution<T: Scalar>(sol: &DVector<Complex<T>>) -> ComplexPoly<T> {
    // Solution vector is in ascending monomial order.
    let coeffs: Vec<_> = sol.iter().rev().cloned().collect();
    ComplexPoly::new(coeffs)
}

/// Solves the Hermite conditions p_k^{(l)}(c_j) = delta_{jk} delta_{l0} for
/// the polynomial of degree <= d-2. For a simple critical point the result
/// agrees with the closed form f'(z) / (f''(c_k) (z - c_k)).
pub fn partial_derivative_poly<T: Scalar>(
    f: &PolyMap<T>,
    k: usize,
) -> Result<PartialDerivativePoly<T>> {
    let profile = critical_profile(f)?;
    partial_from_profile(&profile, f.degree(), k)
}

/// Same solve from a precomputed profile, so callers iterating over k do not
/// refactor the critical points each time.
pub fn partial_from_profile<T: Scalar>(
    profile: &CriticalProfile<T>,
    degree: usize,
    k: usize,
) -> Result<PartialDerivativePoly<T>> {
    let p = profile.len();
    if k == 0 || k > p {
        return Err(Error::invalid(format!("index k={k} out of range 1..={p}")));
    }
    let dim = degree - 1;
    let mat = confluent_vandermonde(&profile.points, &profile.multiplicities, dim);
    let mut rhs = DVector::from_element(dim, Complex::<T>::zero());
    let mut row = 0;
    for j in 0..p {
        if j + 1 == k {
            rhs[row] = Complex::one();
        }
        row += profile.multiplicities[j];
    }
    let sol = mat
        .col_piv_qr()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem {
            what: "Hermite conditions for a partial-derivative polynomial",
            detail: "confluent Vandermonde solve failed; critical points may coincide".into(),
        })?;
    Ok(PartialDerivativePoly { k, poly: poly_from_solution(&sol) })
}

/// Deterministic probe grid on three circles around the critical points.
pub(crate) fn probe_grid<T: Scalar>(scale: T, count_per_circle: usize) -> Vec<Complex<T>> {
    let radii = [0.7, 1.3, 2.1];
    let mut out = Vec::with_capacity(3 * count_per_circle);
    for (ri, r) in radii.iter().enumerate() {
        for i in 0..count_per_circle {
            let angle =
                2.0 * std::f64::consts::PI * (i as f64 + 0.31 + 0.17 * ri as f64)
                    / count_per_circle as f64;
            let rad = scale * real(*r);
            out.push(Complex::new(rad * real(angle.cos()), rad * real(angle.sin())));
        }
    }
    out
}

/// Central-difference check of p_k against the chart: nudge the k-th critical
/// value by +-h, invert the chart both ways, and compare (g+ - g-)/(2h) with
/// p_k on a probe grid. Returns the worst relative mismatch.
pub fn fd_check_partial<T: Scalar>(f: &PolyMap<T>, k: usize, h: T) -> Result<T> {
    let profile = critical_profile(f)?;
    let p = profile.len();
    if k == 0 || k > p {
        return Err(Error::invalid(format!("index k={k} out of range 1..={p}")));
    }
    let pk = partial_from_profile(&profile, f.degree(), k)?;
    let base = profile.finite_values();
    let step = Complex::new(h, T::zero());

    let mut plus = base.clone();
    plus[k - 1] += step;
    let mut minus = base;
    minus[k - 1] -= step;
    // Chart solves must be well below the h^2 truncation error of the
    // central difference; 1e-13 keeps their contribution near h*1e-7.
    let gp = coeffs_from_critical_values(f, &plus, real(1e-13))?;
    let gm = coeffs_from_critical_values(f, &minus, real(1e-13))?;

    let two_h = Complex::new(h + h, T::zero());
    let mut worst = T::zero();
    for z in probe_grid(profile.scale(), 7) {
        let fd = (gp.eval(z) - gm.eval(z)) / two_h;
        let exact = pk.poly.eval(z);
        let err = cabs(fd - exact) / (T::one() + cabs(exact));
        worst = worst.max(err);
    }
    Ok(worst)
}
