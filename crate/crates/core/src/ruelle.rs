//! The pushforward operator on Cauchy kernels and its exact identities.
//!
//! For a degree-d map the operator is
//!
//!   (T_f phi)(x) = sum_{w : f(w) = x} phi(w) / f'(w)^2,
//!
//! a sum over the d preimages of x. Applied to a Cauchy kernel 1/(z - w) it
//! reproduces the kernel at f(z) plus one correction per critical point:
//!
//!   T_f [1/(z - .)](x) = 1/(f'(z) (f(z) - x)) + sum_k L_k(z) / (x - v_k),
//!
//! where L_k = (df/dv_k) / f' equals the principal part of 1/f' at c_k. The
//! module verifies this identity numerically, sums the resolvent series
//! phi_{z,lambda}, checks the fixed-point equation of the critical kernels
//! H_j, and regularizes kernel combinations by their A and B sums.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::Error;
use crate::orbit::{
    finish_series, similarity_factor_with, tail_estimate, Map, SeriesValue, COCYCLE_OVERFLOW,
    POLE_PROXIMITY,
};
use crate::poly::ComplexPoly;
use crate::polymap::partial_from_profile;
use crate::ratmap::{rational_partial_from_profile, RatDirection, RationalMap};
use crate::scalar::{cabs, lex_cmp, real, Scalar};
use crate::Result;

/// Within this distance of its own pole c_k an L function switches from the
/// ratio form (df/dv_k)/f' to the partial-fraction form, which stays stable
/// where the ratio degenerates to 0/0.
pub const LOCAL_SWITCH: f64 = 1e-4;

/// Orbit points past this magnitude end a resolvent orbit; the remaining
/// kernel terms are far below roundoff and higher iterates would overflow.
const FAR_FIELD: f64 = 1e20;

// ---------------------------------------------------------------------------
// The operator itself

/// The d solutions of f(w) = x, polished until |f(w) - x| <= tol, sorted
/// lexicographically. `tol` doubles as the exclusion radius around critical
/// values, where preimages collide and the operator sum is singular.
pub fn preimages<T: Scalar>(f: &Map<T>, x: Complex<T>, tol: T) -> Result<Vec<Complex<T>>> {
    let profile = f.critical_profile()?;
    for v in profile.finite_values() {
        if cabs(x - v) <= tol {
            return Err(Error::CriticalValueCollision {
                value: format!("{v}"),
                tol: crate::scalar::to_f64(tol),
            });
        }
    }
    let numer = match f {
        Map::Poly(g) => g.poly().sub(&ComplexPoly::constant(x)),
        Map::Rational(g) => g.p_hat().sub(&g.q_poly().scale(x)),
    };
    let dnumer = numer.derivative();
    let found = crate::roots::find_roots(&numer, real(1e-13))?;
    let mut out: Vec<Complex<T>> = found
        .flatten()
        .into_iter()
        .map(|w0| {
            let mut w = w0;
            for _ in 0..6 {
                let r = numer.eval(w);
                let d = dnumer.eval(w);
                if d.is_zero() {
                    break;
                }
                let step = r / d;
                w -= step;
                if cabs(step) <= cabs(w) * T::default_epsilon() {
                    break;
                }
            }
            w
        })
        .collect();
    let worst = out
        .iter()
        .map(|&w| cabs(f.eval(w) - x))
        .fold(T::zero(), T::max);
    if worst > tol {
        return Err(Error::NonConvergence {
            what: "preimage refinement",
            iterations: 6,
            residual: crate::scalar::to_f64(worst),
        });
    }
    out.sort_by(lex_cmp);
    Ok(out)
}

/// (T_f phi)(x) = sum phi(w)/f'(w)^2 over the preimages of x.
pub fn apply_transfer<T, F>(f: &Map<T>, phi: F, x: Complex<T>, tol: T) -> Result<Complex<T>>
where
    T: Scalar,
    F: Fn(Complex<T>) -> Complex<T>,
{
    let ws = preimages(f, x, tol)?;
    Ok(ws.iter().fold(Complex::zero(), |acc, &w| {
        let d = f.deriv(w);
        acc + phi(w) / (d * d)
    }))
}

// ---------------------------------------------------------------------------
// The local functions L_k

/// Principal part of 1/f' at the critical point c_j: with f'(w) =
/// (w - c_j)^{m_j} r_j(w), the coefficients are the Taylor expansion of
/// 1/r_j at c_j and
///
///   L_j(z) = sum_{i=1..m_j} q_{m_j - i} / (z - c_j)^i.
#[derive(Debug, Clone)]
pub struct LocalLCoefficients<T: Scalar> {
    pub j: usize,
    pub point: Complex<T>,
    pub multiplicity: usize,
    /// q_0 .. q_{m_j-1}; q_0 = 1/r_j(c_j) is nonzero.
    pub coefficients: Vec<Complex<T>>,
}

impl<T: Scalar> LocalLCoefficients<T> {
    /// Evaluates the partial-fraction form at z != c_j.
    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        let inv = Complex::<T>::one() / (z - self.point);
        self.coefficients
            .iter()
            .fold(Complex::zero(), |acc, &q| (acc + q) * inv)
    }
}

/// Taylor coefficients of the reciprocal series 1/r from those of r.
fn reciprocal_series<T: Scalar>(r: &[Complex<T>]) -> Vec<Complex<T>> {
    let inv0 = Complex::<T>::one() / r[0];
    let mut q = vec![Complex::<T>::zero(); r.len()];
    q[0] = inv0;
    for n in 1..r.len() {
        let mut s = Complex::<T>::zero();
        for i in 1..=n {
            s += r[i] * q[n - i];
        }
        q[n] = -s * inv0;
    }
    q
}

fn series_mul<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>], count: usize) -> Vec<Complex<T>> {
    let mut out = vec![Complex::<T>::zero(); count];
    for n in 0..count {
        for i in 0..=n {
            out[n] += a[i] * b[n - i];
        }
    }
    out
}

/// Deflates f' by (w - c_j)^{m_j} and expands the reciprocal of what is left.
/// For rational maps 1/r_j = Q^2 / (W / (w - c_j)^{m_j}).
pub fn local_l_coefficients<T: Scalar>(f: &Map<T>, j: usize) -> Result<LocalLCoefficients<T>> {
    let profile = f.critical_profile()?;
    if j == 0 || j > profile.len() {
        return Err(Error::invalid(format!("critical index j={j} out of range 1..={}", profile.len())));
    }
    if profile.values[j - 1].is_infinite() {
        return Err(Error::invalid("local coefficients need a finite critical value"));
    }
    let c = profile.points[j - 1];
    let m = profile.multiplicities[j - 1];
    let numer = match f {
        Map::Poly(g) => g.derivative_poly().clone(),
        Map::Rational(g) => g.w_poly().clone(),
    };
    let (deflated, worst) = numer.deflate_root(c, m);
    let scale = numer.eval_scale(c).max(T::one());
    if worst > scale * real(1e-8) {
        return Err(Error::SingularSystem {
            what: "local L coefficients",
            detail: format!(
                "deflating multiplicity {m} leaves remainder {:.3e}",
                crate::scalar::to_f64(worst)
            ),
        });
    }
    let r = deflated.taylor_at(c, m);
    if cabs(r[0]) <= deflated.eval_scale(c) * real(1e-10) {
        return Err(Error::SingularSystem {
            what: "local L coefficients",
            detail: "deflated derivative still vanishes at the critical point".into(),
        });
    }
    let coefficients = match f {
        Map::Poly(_) => reciprocal_series(&r),
        Map::Rational(g) => {
            let q2 = g.q_poly().mul(g.q_poly()).taylor_at(c, m);
            series_mul(&q2, &reciprocal_series(&r), m)
        }
    };
    Ok(LocalLCoefficients { j, point: c, multiplicity: m, coefficients })
}

/// One function L_k = (df/dv_k)/f' with both of its evaluation forms.
#[derive(Debug, Clone)]
pub struct LFunction<T: Scalar> {
    numer: ComplexPoly<T>,
    local: LocalLCoefficients<T>,
}

impl<T: Scalar> LFunction<T> {
    pub fn eval(&self, f: &Map<T>, z: Complex<T>) -> Complex<T> {
        if cabs(z - self.local.point) < real(LOCAL_SWITCH) {
            return self.local.eval(z);
        }
        match f {
            Map::Poly(g) => self.numer.eval(z) / g.deriv(z),
            Map::Rational(g) => self.numer.eval(z) / g.w_poly().eval(z),
        }
    }
}

/// L_1 .. L_p for every critical point with finite critical value.
pub fn l_functions<T: Scalar>(f: &Map<T>) -> Result<Vec<LFunction<T>>> {
    let profile = f.critical_profile()?;
    (1..=profile.finite_count())
        .map(|k| {
            let numer = match f {
                Map::Poly(g) => partial_from_profile(&profile, g.degree(), k)?.poly,
                Map::Rational(g) => rational_partial_from_profile(g, &profile, RatDirection::V(k))?
                    .p_tilde
                    .expect("value direction carries a numerator"),
            };
            Ok(LFunction { numer, local: local_l_coefficients(f, k)? })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Kernel identity

/// |LHS - RHS| of the kernel identity at the probe pair (z, x), with
/// LHS = T_f applied to 1/(z - .) and RHS the critical-point expansion.
/// Preconditions: z off critical points and poles, x off critical values,
/// x != f(z). Well-conditioned probes come out below 1e-9.
pub fn kernel_identity_residual<T: Scalar>(
    f: &Map<T>,
    z: Complex<T>,
    x: Complex<T>,
) -> Result<T> {
    let profile = f.critical_profile()?;
    let guard = real::<T>(1e-8) * profile.scale();
    if profile.points.iter().any(|&c| cabs(z - c) < guard) {
        return Err(Error::invalid("probe z sits on a critical point"));
    }
    if let Map::Rational(g) = f {
        if g.pole_distance(z) < guard {
            return Err(Error::invalid("probe z sits on a pole"));
        }
    }
    let fz = f.eval(z);
    if cabs(fz - x) < real::<T>(1e-10) * (T::one() + cabs(fz)) {
        return Err(Error::invalid("probe x coincides with f(z)"));
    }

    let tol = real::<T>(1e-10) * (T::one() + cabs(x));
    let ws = preimages(f, x, tol)?;
    let lhs = ws.iter().fold(Complex::<T>::zero(), |acc, &w| {
        let d = f.deriv(w);
        acc + Complex::<T>::one() / ((z - w) * d * d)
    });

    let ls = l_functions(f)?;
    let mut rhs = Complex::<T>::one() / (f.deriv(z) * (fz - x));
    for (lf, &vk) in ls.iter().zip(profile.finite_values().iter()) {
        rhs += lf.eval(f, z) / (x - vk);
    }
    Ok(cabs(lhs - rhs))
}

// ---------------------------------------------------------------------------
// Resolvent series

/// Forward orbit y_n = f^n(z) with the cocycle (f^n)'(z), cut at the budget,
/// at a pole hit (after which every kernel term vanishes identically), at the
/// far field, or at cocycle overflow.
struct ResolventOrbit<T: Scalar> {
    points: Vec<Complex<T>>,
    cocycles: Vec<Complex<T>>,
    hit_infinity: bool,
}

fn resolvent_orbit<T: Scalar>(f: &Map<T>, z: Complex<T>, budget: usize) -> Result<ResolventOrbit<T>> {
    if budget == 0 {
        return Err(Error::invalid("resolvent budget must be positive"));
    }
    let mut points = vec![z];
    let mut cocycles = vec![Complex::<T>::one()];
    let mut hit_infinity = false;
    let mut y = z;
    let mut cum = Complex::<T>::one();
    for _ in 1..budget {
        if let Map::Rational(g) = f {
            if g.pole_distance(y) <= real::<T>(POLE_PROXIMITY) * (T::one() + cabs(y)) {
                hit_infinity = true;
                break;
            }
        }
        if cabs(y) > real(FAR_FIELD) || cabs(cum) > real(COCYCLE_OVERFLOW) {
            break;
        }
        cum *= f.deriv(y);
        y = f.eval(y);
        points.push(y);
        cocycles.push(cum);
    }
    Ok(ResolventOrbit { points, cocycles, hit_infinity })
}

impl<T: Scalar> ResolventOrbit<T> {
    /// Terms lambda^n / ((f^n)'(z) (y_n - target)), n = 0, 1, ...
    fn kernel_terms(&self, lambda: Complex<T>, target: Complex<T>) -> Result<Vec<Complex<T>>> {
        let floor = real::<T>(1e-12) * (T::one() + cabs(target));
        let mut lam = Complex::<T>::one();
        let mut out = Vec::with_capacity(self.points.len());
        for (&y, &cum) in self.points.iter().zip(&self.cocycles) {
            let den = y - target;
            if cabs(den) < floor {
                return Err(Error::invalid("kernel target lies on the forward orbit"));
            }
            out.push(lam / cum / den);
            lam *= lambda;
            if lam.is_zero() {
                break;
            }
        }
        Ok(out)
    }

    /// Terms lambda^n L(y_n) / (f^n)'(z) of the coefficient series Phi_k.
    fn l_terms(&self, f: &Map<T>, lambda: Complex<T>, lf: &LFunction<T>) -> Vec<Complex<T>> {
        let mut lam = Complex::<T>::one();
        let mut out = Vec::with_capacity(self.points.len());
        for (&y, &cum) in self.points.iter().zip(&self.cocycles) {
            out.push(lam / cum * lf.eval(f, y));
            lam *= lambda;
            if lam.is_zero() {
                break;
            }
        }
        out
    }
}

fn term_sum<T: Scalar>(terms: &[Complex<T>]) -> Complex<T> {
    terms.iter().fold(Complex::zero(), |s, &t| s + t)
}

fn term_tail<T: Scalar>(terms: &[Complex<T>], exact: bool) -> T {
    if exact {
        return T::zero();
    }
    let mags: Vec<T> = terms.iter().map(|&t| cabs(t)).collect();
    tail_estimate(&mags, T::zero()).0
}

/// The resolvent series phi_{z,lambda}(x) = sum_n lambda^n / ((f^n)'(z)
/// (f^n(z) - x)), truncated at `budget` terms. Truncates exactly once the
/// orbit of z steps onto a pole; reports divergence when |lambda| outruns
/// the cocycle growth.
pub fn varphi_eval<T: Scalar>(
    f: &Map<T>,
    z: Complex<T>,
    lambda: Complex<T>,
    x: Complex<T>,
    tol: T,
    budget: usize,
) -> Result<SeriesValue<T>> {
    let orbit = resolvent_orbit(f, z, budget)?;
    let terms = orbit.kernel_terms(lambda, x)?;
    finish_series("resolvent series", Complex::zero(), &terms, orbit.hit_infinity, false, tol)
}

/// Residual of a truncated identity together with the tail budget of every
/// series that entered it.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport<T: Scalar> {
    pub residual: T,
    /// Sum of the geometric tail bounds of the truncated series involved.
    pub tail_budget: T,
    pub terms_used: usize,
}

/// Residual of phi - lambda T_f phi = 1/(z-x) + lambda sum_k Phi_k/(v_k - x)
/// with every series truncated at the same orbit length, so the truncation
/// errors cancel except for a single leftover term.
pub fn resolvent_identity_residual<T: Scalar>(
    f: &Map<T>,
    z: Complex<T>,
    lambda: Complex<T>,
    x: Complex<T>,
    budget: usize,
) -> Result<ResidualReport<T>> {
    let profile = f.critical_profile()?;
    let ls = l_functions(f)?;
    let orbit = resolvent_orbit(f, z, budget)?;
    let n = orbit.points.len();
    // At lambda = 0 every term past the first vanishes identically, so the
    // one-term truncation is exact, same as a pole hit.
    let exact = orbit.hit_infinity || lambda.is_zero();

    let phi_terms = orbit.kernel_terms(lambda, x)?;
    let phi_x = term_sum(&phi_terms);
    let mut tail_budget = term_tail(&phi_terms, exact);

    let ptol = real::<T>(1e-10) * (T::one() + cabs(x));
    let ws = preimages(f, x, ptol)?;
    let mut transfer = Complex::<T>::zero();
    for &w in &ws {
        let d = f.deriv(w);
        let terms = orbit.kernel_terms(lambda, w)?;
        transfer += term_sum(&terms) / (d * d);
        tail_budget += term_tail(&terms, exact) / cabs(d * d);
    }

    let mut correction = Complex::<T>::zero();
    for (lf, &vk) in ls.iter().zip(profile.finite_values().iter()) {
        let terms = orbit.l_terms(f, lambda, lf);
        correction += lambda * term_sum(&terms) / (vk - x);
        tail_budget += cabs(lambda) * term_tail(&terms, exact) / cabs(vk - x);
    }

    let residual =
        cabs(phi_x - lambda * transfer - Complex::<T>::one() / (z - x) - correction);
    Ok(ResidualReport { residual, tail_budget, terms_used: n })
}

/// Residual of the fixed-point equation H_j - T_f H_j = sum_k L(c_j, v_k) /
/// (v_k - x) for the critical kernel H_j = phi_{v_j, 1}. Both H_j sums and
/// the similarity values are truncated at the same orbit length; the leftover
/// telescoping term and the L tail bounds are reported as the tail budget.
pub fn fixed_point_residual<T: Scalar>(
    f: &Map<T>,
    j: usize,
    x: Complex<T>,
    budget: usize,
) -> Result<ResidualReport<T>> {
    let profile = f.critical_profile()?;
    if j == 0 || j > profile.len() {
        return Err(Error::invalid(format!("row index j={j} out of range 1..={}", profile.len())));
    }
    let Some(vj) = profile.values[j - 1].finite() else {
        return Err(Error::invalid("fixed-point identity needs a finite critical value"));
    };
    let one = Complex::<T>::one();
    let orbit = resolvent_orbit(f, vj, budget)?;
    let n = orbit.points.len();

    let h_terms = orbit.kernel_terms(one, x)?;
    let h_x = term_sum(&h_terms);

    let ptol = real::<T>(1e-10) * (T::one() + cabs(x));
    let ws = preimages(f, x, ptol)?;
    let mut transfer = Complex::<T>::zero();
    for &w in &ws {
        let d = f.deriv(w);
        transfer += term_sum(&orbit.kernel_terms(one, w)?) / (d * d);
    }

    // The next telescoping term, the only first-order leftover of the
    // common truncation.
    let mut tail_budget = T::zero();
    if !orbit.hit_infinity {
        let y_last = orbit.points[n - 1];
        let keep_going = match f {
            Map::Rational(g) => {
                g.pole_distance(y_last) > real::<T>(POLE_PROXIMITY) * (T::one() + cabs(y_last))
            }
            Map::Poly(_) => true,
        };
        if keep_going && cabs(y_last) < real(FAR_FIELD) {
            let cum_next = orbit.cocycles[n - 1] * f.deriv(y_last);
            let y_next = f.eval(y_last);
            if !cum_next.is_zero() {
                tail_budget += T::one() / (cabs(cum_next) * cabs(y_next - x));
            }
        }
    }

    let mut rhs = Complex::<T>::zero();
    for (k, &vk) in profile.finite_values().iter().enumerate() {
        let l = similarity_factor_with(f, j, RatDirection::V(k + 1), real(1e-12), n)?;
        rhs += l.value / (vk - x);
        if l.tail_bound < real(f64::INFINITY) {
            tail_budget += l.tail_bound / cabs(vk - x);
        }
    }

    let residual = cabs(h_x - transfer - rhs);
    Ok(ResidualReport { residual, tail_budget, terms_used: n })
}

// ---------------------------------------------------------------------------
// Kernel combinations and their regularization

/// H(x) = sum_k alpha_k / (b_k - x) with pairwise distinct poles.
#[derive(Debug, Clone)]
pub struct KernelCombination<T: Scalar> {
    weights: Vec<Complex<T>>,
    poles: Vec<Complex<T>>,
}

/// Poles closer than this are rejected as coincident.
pub const POLE_RESOLUTION: f64 = 1e-12;

impl<T: Scalar> KernelCombination<T> {
    pub fn new(weights: Vec<Complex<T>>, poles: Vec<Complex<T>>) -> Result<Self> {
        if weights.len() != poles.len() {
            return Err(Error::invalid(format!(
                "{} weights against {} poles",
                weights.len(),
                poles.len()
            )));
        }
        for i in 0..poles.len() {
            for l in (i + 1)..poles.len() {
                let d = cabs(poles[i] - poles[l]);
                if d <= real(POLE_RESOLUTION) {
                    return Err(Error::invalid(format!(
                        "poles {} and {} coincide at resolution {POLE_RESOLUTION:.0e}",
                        poles[i], poles[l]
                    )));
                }
            }
        }
        Ok(KernelCombination { weights, poles })
    }

    pub fn weights(&self) -> &[Complex<T>] {
        &self.weights
    }

    pub fn poles(&self) -> &[Complex<T>] {
        &self.poles
    }

    pub fn eval(&self, x: Complex<T>) -> Complex<T> {
        self.weights
            .iter()
            .zip(&self.poles)
            .fold(Complex::zero(), |acc, (&a, &b)| acc + a / (b - x))
    }

    /// Attaches the sums A = sum alpha_k and B = sum alpha_k b_k, which make
    /// H(x) + A/x + B/x^2 decay like 1/x^3.
    pub fn regularize(&self) -> RegularizedSeries<T> {
        let a = self.weights.iter().fold(Complex::zero(), |s, &w| s + w);
        let b = self
            .weights
            .iter()
            .zip(&self.poles)
            .fold(Complex::zero(), |s, (&w, &p)| s + w * p);
        RegularizedSeries { base: self.clone(), a, b }
    }
}

/// A kernel combination with its regularizing sums.
#[derive(Debug, Clone)]
pub struct RegularizedSeries<T: Scalar> {
    pub base: KernelCombination<T>,
    /// A = sum alpha_k.
    pub a: Complex<T>,
    /// B = sum alpha_k b_k.
    pub b: Complex<T>,
}

impl<T: Scalar> RegularizedSeries<T> {
    /// Hhat(x) = H(x) + A/x + B/x^2, integrable at infinity.
    pub fn hat_eval(&self, x: Complex<T>) -> Complex<T> {
        self.base.eval(x) + self.a / x + self.b / (x * x)
    }
}

/// Far-field diagnostic for the pushforward: the maximum of
/// |T_f(1/.)(x) - 1/(sigma x) - b/(sigma x^2)| over `samples` points of the
/// circle |x| = radius. Decays like 1/radius^3 when the operator is
/// implemented correctly.
pub fn pushforward_asymptotic_residual<T: Scalar>(
    g: &RationalMap<T>,
    radius: T,
    samples: usize,
) -> Result<T> {
    let f: Map<T> = g.clone().into();
    let sigma = g.sigma();
    let b = g.b();
    let tol = real::<T>(1e-12) * (T::one() + radius);
    let mut worst = T::zero();
    for s in 0..samples {
        let theta = std::f64::consts::TAU * (s as f64) / (samples as f64);
        let x = Complex::new(radius * real(theta.cos()), radius * real(theta.sin()));
        let tf = apply_transfer(&f, |w| Complex::<T>::one() / w, x, tol)?;
        let expansion = Complex::<T>::one() / (sigma * x) + b / (sigma * x * x);
        worst = worst.max(cabs(tf - expansion));
    }
    Ok(worst)
}
