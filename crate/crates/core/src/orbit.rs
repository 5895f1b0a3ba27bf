//! Orbit traces and the similarity series along critical orbits.
//!
//! For a map f with critical value v the engine records the orbit y_n =
//! f^n(v), the derivative cocycle (f^n)'(v) and the spherical weights
//! s_n = (1 + |y_n|^2) / ((1 + |v|^2) |(f^n)'(v)|) whose sum is the
//! summability test. On top of the trace it evaluates the series
//!
//!   L(c_j, .) = delta + sum_{n>=1} u(y_{n-1}) / (f^n)'(v_j),
//!
//! where u is the tangent numerator of the chosen coordinate direction.
//! Every term is computed as [u/f'](y_{n-1}) / (f^{n-1})'(v_j), which stays
//! finite when the orbit steps onto a pole; an orbit reaching infinity makes
//! all later terms vanish, so those sums are finite and exact.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::Error;
use crate::poly::ComplexPoly;
use crate::polymap::{critical_profile, partial_from_profile, CriticalProfile, PolyMap};
use crate::ratmap::{
    rational_critical_profile, rational_partial_from_profile, ConjugatedMap, RatDirection,
    RationalMap,
};
use crate::scalar::{cabs, lex_cmp, real, Scalar, SpherePoint};
use crate::Result;

/// Once |z| passes this the point is treated as infinity (rational maps) or
/// as escaped far field (polynomials iterated for series purposes).
pub const INFINITY_THRESHOLD: f64 = 1e8;

/// Orbit points closer than this (times the critical scale) to a critical
/// point stop the trace: the cocycle degenerates there.
pub const CRITICAL_PROXIMITY: f64 = 1e-10;

/// Relative distance to a pole that counts as an exact hit.
pub const POLE_PROXIMITY: f64 = 1e-10;

/// Default series budget when the caller does not pass one.
pub const DEFAULT_MAX_TERMS: usize = 512;

const CAUCHY_BLOCK: usize = 50;
const TAIL_WINDOW: usize = 10;
const TAIL_RATIO_CAP: f64 = 0.95;

/// Series terms stop once the cocycle magnitude passes this; whatever would
/// follow is far below roundoff, and complex division by an overflowed
/// cocycle would poison the sum with NaN.
pub(crate) const COCYCLE_OVERFLOW: f64 = 1e280;

// ---------------------------------------------------------------------------
// Map dispatch

/// A member of either family: monic centered polynomial or sigma z + b + P/Q.
#[derive(Debug, Clone)]
pub enum Map<T: Scalar> {
    Poly(PolyMap<T>),
    Rational(RationalMap<T>),
}

impl<T: Scalar> From<PolyMap<T>> for Map<T> {
    fn from(f: PolyMap<T>) -> Self {
        Map::Poly(f)
    }
}

impl<T: Scalar> From<RationalMap<T>> for Map<T> {
    fn from(f: RationalMap<T>) -> Self {
        Map::Rational(f)
    }
}

impl<T: Scalar> Map<T> {
    pub fn degree(&self) -> usize {
        match self {
            Map::Poly(f) => f.degree(),
            Map::Rational(f) => f.degree(),
        }
    }

    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        match self {
            Map::Poly(f) => f.eval(z),
            Map::Rational(f) => f.eval(z),
        }
    }

    pub fn deriv(&self, z: Complex<T>) -> Complex<T> {
        match self {
            Map::Poly(f) => f.deriv(z),
            Map::Rational(f) => f.deriv(z),
        }
    }

    pub fn critical_profile(&self) -> Result<CriticalProfile<T>> {
        match self {
            Map::Poly(f) => critical_profile(f),
            Map::Rational(f) => rational_critical_profile(f),
        }
    }

    /// Escape bound for polynomials; rational orbits never escape, they hit
    /// the far-field cutoff instead.
    pub fn escape_radius(&self) -> T {
        match self {
            Map::Poly(f) => f.escape_radius(),
            Map::Rational(_) => real(INFINITY_THRESHOLD),
        }
    }
}

// ---------------------------------------------------------------------------
// Orbit traces

/// Why an orbit stopped before its budget. The payload is the index of the
/// last recorded point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Budget ran out with every point finite and noncritical.
    Budget,
    /// f^l(v) is infinity: the orbit stepped onto a pole. Every later series
    /// term vanishes identically, so truncated sums are exact.
    HitInfinity(usize),
    /// The orbit landed within tolerance of a critical point, so the
    /// derivative cocycle degenerates from here on.
    HitCritical(usize),
    /// The orbit passed the escape radius (polynomials) or the far-field
    /// cutoff (rational maps drifting towards infinity without a pole hit).
    Escaped(usize),
}

/// The orbit of a single starting point together with the derivative cocycle.
///
/// `points[n]` is f^n(start). `derivatives[n]` is (f^n)'(start), so
/// `derivatives[0] = 1` and `derivatives[n+1] = f'(points[n]) *
/// derivatives[n]`; the vector is one entry shorter than `points` when the
/// last point is infinity. `terms[n]` is the spherical weight s_n aligned
/// with `derivatives`.
#[derive(Debug, Clone)]
pub struct OrbitTrace<T: Scalar> {
    pub start: Complex<T>,
    pub points: Vec<SpherePoint<T>>,
    pub derivatives: Vec<Complex<T>>,
    pub terms: Vec<T>,
    pub termination: Termination,
}

impl<T: Scalar> OrbitTrace<T> {
    /// Number of iteration steps actually recorded.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// How many series terms the trace supports: the n-th term reads the
    /// point and cocycle at index n-1, and the point next to a critical hit
    /// is excluded.
    pub fn usable_terms(&self) -> usize {
        match self.termination {
            Termination::HitInfinity(l) => l,
            Termination::HitCritical(n) => n,
            Termination::Escaped(n) => n,
            Termination::Budget => self.points.len() - 1,
        }
    }
}

/// Iterates v under f for at most `budget` steps. `radius` overrides the
/// polynomial escape radius (rational maps ignore it). Stops early on a pole
/// hit, on the far-field cutoff, and within [`CRITICAL_PROXIMITY`] of a
/// critical point.
pub fn iterate_orbit<T: Scalar>(
    f: &Map<T>,
    v: Complex<T>,
    budget: usize,
    radius: Option<T>,
) -> Result<OrbitTrace<T>> {
    let profile = f.critical_profile()?;
    let crit_tol = real::<T>(CRITICAL_PROXIMITY) * profile.scale();
    let near_critical =
        |z: Complex<T>| profile.points.iter().any(|&c| cabs(z - c) < crit_tol);
    let r = radius.unwrap_or_else(|| f.escape_radius());

    let mut points = vec![SpherePoint::Finite(v)];
    let mut derivatives = vec![Complex::<T>::one()];
    let denom0 = T::one() + v.norm_sqr();
    let mut terms = vec![T::one()];
    let mut termination = Termination::Budget;

    if near_critical(v) {
        termination = Termination::HitCritical(0);
        return Ok(OrbitTrace { start: v, points, derivatives, terms, termination });
    }

    let mut y = v;
    let mut cum = Complex::<T>::one();
    for step in 1..=budget {
        if let Map::Rational(g) = f {
            if g.pole_distance(y) <= real::<T>(POLE_PROXIMITY) * (T::one() + cabs(y)) {
                points.push(SpherePoint::Infinity);
                termination = Termination::HitInfinity(step);
                break;
            }
        }
        let df = f.deriv(y);
        let z = f.eval(y);
        cum *= df;
        let weight = (T::one() + z.norm_sqr()) / (denom0 * cabs(cum));
        match f {
            Map::Poly(_) if cabs(z) > r => {
                points.push(SpherePoint::Finite(z));
                derivatives.push(cum);
                terms.push(weight);
                termination = Termination::Escaped(step);
                break;
            }
            Map::Rational(_) if cabs(z) > real(INFINITY_THRESHOLD) => {
                points.push(SpherePoint::Finite(z));
                derivatives.push(cum);
                terms.push(weight);
                termination = Termination::Escaped(step);
                break;
            }
            _ => {}
        }
        points.push(SpherePoint::Finite(z));
        derivatives.push(cum);
        terms.push(weight);
        if near_critical(z) {
            termination = Termination::HitCritical(step);
            break;
        }
        y = z;
    }
    Ok(OrbitTrace { start: v, points, derivatives, terms, termination })
}

// ---------------------------------------------------------------------------
// Series values

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesStatus {
    /// The geometric tail bound passed the requested tolerance.
    Converged,
    /// The orbit reached infinity; the remaining terms vanish identically and
    /// the partial sum is the exact value.
    TruncatedAtInfinity,
    /// Partial sums failed to stabilize.
    Diverged,
    /// Budget ran out before the tail could be bounded by the tolerance.
    BudgetExhausted,
}

/// A truncated series together with its accounting.
#[derive(Debug, Clone, Copy)]
pub struct SeriesValue<T: Scalar> {
    pub value: Complex<T>,
    /// Bound on the dropped tail; zero for exact truncations, infinite when
    /// no geometric bound exists.
    pub tail_bound: T,
    pub terms_used: usize,
    pub status: SeriesStatus,
}

/// Sums the spherical weights s_n of a trace. Convergence is judged by
/// blocks of 50 consecutive terms: stabilized when the last block adds at
/// most `tol`, diverged when the blocks grow.
pub fn summability_diagnostic<T: Scalar>(trace: &OrbitTrace<T>, tol: T) -> SeriesValue<T> {
    let n = trace.terms.len();
    let total = trace.terms.iter().fold(T::zero(), |s, &t| s + t);
    let value = Complex::new(total, T::zero());
    if matches!(trace.termination, Termination::HitInfinity(_)) {
        return SeriesValue {
            value,
            tail_bound: T::zero(),
            terms_used: n,
            status: SeriesStatus::TruncatedAtInfinity,
        };
    }
    let block = |range: std::ops::Range<usize>| {
        trace.terms[range].iter().fold(T::zero(), |s, &t| s + t)
    };
    let (tail_bound, mut status) = tail_estimate(&trace.terms, tol);
    if n >= 2 * CAUCHY_BLOCK {
        let first = block(0..CAUCHY_BLOCK);
        let last = block(n - CAUCHY_BLOCK..n);
        if last > first && last > tol {
            status = SeriesStatus::Diverged;
        } else if last <= tol && status != SeriesStatus::Converged {
            status = SeriesStatus::Converged;
        }
    }
    SeriesValue { value, tail_bound, terms_used: n, status }
}

/// Fits a geometric ratio to the last few magnitudes. Returns the tail bound
/// and the matching status against `tol`.
pub(crate) fn tail_estimate<T: Scalar>(mags: &[T], tol: T) -> (T, SeriesStatus) {
    let window = &mags[mags.len().saturating_sub(TAIL_WINDOW)..];
    let nonzero: Vec<T> = window.iter().copied().filter(|m| *m > T::zero()).collect();
    if nonzero.is_empty() {
        // The terms died out entirely; nothing is being dropped.
        return (T::zero(), SeriesStatus::Converged);
    }
    if nonzero.len() == 1 {
        return (real(f64::INFINITY), SeriesStatus::BudgetExhausted);
    }
    let steps = real::<T>((nonzero.len() - 1) as f64);
    let last = *nonzero.last().unwrap();
    let rho = (last / nonzero[0]).powf(T::one() / steps);
    if rho < real(TAIL_RATIO_CAP) {
        let tail = last * rho / (T::one() - rho);
        let status =
            if tail <= tol { SeriesStatus::Converged } else { SeriesStatus::BudgetExhausted };
        (tail, status)
    } else {
        (real(f64::INFINITY), SeriesStatus::BudgetExhausted)
    }
}

/// Folds a term list into a [`SeriesValue`]. `exact` marks truncation at
/// infinity, `barrier` a critical hit (the next term has no bound at all).
pub(crate) fn finish_series<T: Scalar>(
    what: &'static str,
    delta: Complex<T>,
    terms: &[Complex<T>],
    exact: bool,
    barrier: bool,
    tol: T,
) -> Result<SeriesValue<T>> {
    let value = terms.iter().fold(delta, |s, &t| s + t);
    let terms_used = terms.len();
    if exact {
        return Ok(SeriesValue {
            value,
            tail_bound: T::zero(),
            terms_used,
            status: SeriesStatus::TruncatedAtInfinity,
        });
    }
    let mags: Vec<T> = terms.iter().map(|&t| cabs(t)).collect();
    if terms_used >= 2 * CAUCHY_BLOCK {
        let first: T = mags[..CAUCHY_BLOCK].iter().fold(T::zero(), |s, &m| s + m);
        let last: T = mags[terms_used - CAUCHY_BLOCK..].iter().fold(T::zero(), |s, &m| s + m);
        if last > first && last > tol {
            return Err(Error::DivergenceDetected {
                what,
                detail: format!(
                    "trailing 50-term block {:.3e} exceeds the leading block {:.3e}",
                    crate::scalar::to_f64(last),
                    crate::scalar::to_f64(first)
                ),
            });
        }
    }
    if barrier {
        return Ok(SeriesValue {
            value,
            tail_bound: real(f64::INFINITY),
            terms_used,
            status: SeriesStatus::BudgetExhausted,
        });
    }
    let (tail_bound, status) = tail_estimate(&mags, tol);
    Ok(SeriesValue { value, tail_bound, terms_used, status })
}

// ---------------------------------------------------------------------------
// Direction plumbing

/// Evaluates u/f' for the active coordinate direction, where u is the tangent
/// numerator. Polynomial slots divide by f' directly (orbits stop before
/// critical points); rational slots use the pole-safe Ptilde/W form, with the
/// sigma and b directions contributing (l0 z + l1)/sigma.
enum RatioEval<T: Scalar> {
    Poly(ComplexPoly<T>),
    Rational { lin: [Complex<T>; 2], num: ComplexPoly<T> },
}

impl<T: Scalar> RatioEval<T> {
    fn eval(&self, f: &Map<T>, y: Complex<T>) -> Complex<T> {
        match (self, f) {
            (RatioEval::Poly(p), Map::Poly(g)) => p.eval(y) / g.deriv(y),
            (RatioEval::Rational { lin, num }, Map::Rational(g)) => {
                let mut out = (lin[0] * y + lin[1]) / g.sigma();
                if !num.is_zero() {
                    out += num.eval(y) / g.w_poly().eval(y);
                }
                out
            }
            _ => unreachable!("direction evaluator paired with the wrong map kind"),
        }
    }
}

fn ratio_for<T: Scalar>(
    f: &Map<T>,
    profile: &CriticalProfile<T>,
    which: RatDirection,
) -> Result<RatioEval<T>> {
    match (f, which) {
        (Map::Poly(g), RatDirection::V(k)) => {
            let part = partial_from_profile(profile, g.degree(), k)?;
            Ok(RatioEval::Poly(part.poly))
        }
        (Map::Poly(_), _) => {
            Err(Error::invalid("sigma and b directions exist only for rational maps"))
        }
        (Map::Rational(g), which) => {
            let part = rational_partial_from_profile(g, profile, which)?;
            let (lin, num) = match which {
                RatDirection::Sigma => ([Complex::one(), Complex::zero()], ComplexPoly::zero()),
                RatDirection::B => ([Complex::zero(), Complex::one()], ComplexPoly::zero()),
                RatDirection::V(_) => (
                    [Complex::zero(), Complex::zero()],
                    part.p_tilde.expect("value direction carries a numerator"),
                ),
            };
            Ok(RatioEval::Rational { lin, num })
        }
    }
}

fn delta_for<T: Scalar>(j: usize, which: RatDirection) -> Complex<T> {
    match which {
        RatDirection::V(k) if k == j => Complex::one(),
        _ => Complex::zero(),
    }
}

/// Shared driver: iterate the orbit of v_j and sum the direction terms.
fn series_from_orbit<T: Scalar>(
    f: &Map<T>,
    vj: SpherePoint<T>,
    delta: Complex<T>,
    ratio: &RatioEval<T>,
    tol: T,
    max_terms: usize,
) -> Result<SeriesValue<T>> {
    let Some(v) = vj.finite() else {
        // The orbit sits at infinity where every numerator vanishes; the
        // series is the bare delta.
        return Ok(SeriesValue {
            value: delta,
            tail_bound: T::zero(),
            terms_used: 0,
            status: SeriesStatus::TruncatedAtInfinity,
        });
    };
    let trace = iterate_orbit(f, v, max_terms, Some(real(INFINITY_THRESHOLD)))?;
    let usable = trace.usable_terms().min(max_terms);
    let mut terms = Vec::with_capacity(usable);
    for i in 0..usable {
        let cum = trace.derivatives[i];
        if cabs(cum) > real(COCYCLE_OVERFLOW) {
            break;
        }
        let y = trace.points[i].finite().expect("points before the stop are finite");
        terms.push(ratio.eval(f, y) / cum);
    }
    let exact = matches!(trace.termination, Termination::HitInfinity(_));
    let barrier = matches!(trace.termination, Termination::HitCritical(_));
    finish_series("similarity series", delta, &terms, exact, barrier, tol)
}

// ---------------------------------------------------------------------------
// Public series entry points

/// The similarity limit L(c_j, direction) with the default term budget.
pub fn similarity_factor<T: Scalar>(
    f: &Map<T>,
    j: usize,
    which: RatDirection,
    tol: T,
) -> Result<SeriesValue<T>> {
    similarity_factor_with(f, j, which, tol, DEFAULT_MAX_TERMS)
}

/// Same with an explicit cap on the number of series terms.
pub fn similarity_factor_with<T: Scalar>(
    f: &Map<T>,
    j: usize,
    which: RatDirection,
    tol: T,
    max_terms: usize,
) -> Result<SeriesValue<T>> {
    let profile = f.critical_profile()?;
    similarity_factor_in(f, &profile, j, which, tol, max_terms)
}

/// The same series against a caller-supplied profile. Normalized spaces
/// reorder the critical slots, so j and any V(k) direction are read in the
/// order of `profile`, not the map's own.
pub fn similarity_factor_in<T: Scalar>(
    f: &Map<T>,
    profile: &CriticalProfile<T>,
    j: usize,
    which: RatDirection,
    tol: T,
    max_terms: usize,
) -> Result<SeriesValue<T>> {
    if j == 0 || j > profile.len() {
        return Err(Error::invalid(format!("row index j={j} out of range 1..={}", profile.len())));
    }
    let ratio = ratio_for(f, profile, which)?;
    series_from_orbit(f, profile.values[j - 1], delta_for(j, which), &ratio, tol, max_terms)
}

/// Partial sums of the similarity series: entry m (1-based) is
/// delta + sum_{n=1}^{m-1} of the terms, the exact first-order response of
/// f^{m-1}(v_j) normalized by (f^{m-1})'(v_j). After an orbit reaches
/// infinity the entries stay constant; a critical hit truncates the list.
pub fn ratio_sequence<T: Scalar>(
    f: &Map<T>,
    j: usize,
    which: RatDirection,
    m_max: usize,
) -> Result<Vec<Complex<T>>> {
    let profile = f.critical_profile()?;
    if j == 0 || j > profile.len() {
        return Err(Error::invalid(format!("row index j={j} out of range 1..={}", profile.len())));
    }
    if m_max == 0 {
        return Ok(Vec::new());
    }
    let delta = delta_for(j, which);
    let Some(v) = profile.values[j - 1].finite() else {
        return Ok(vec![delta; m_max]);
    };
    let ratio = ratio_for(f, &profile, which)?;
    let trace = iterate_orbit(f, v, m_max, Some(real(INFINITY_THRESHOLD)))?;
    let usable = trace.usable_terms();
    let mut out = Vec::with_capacity(m_max);
    let mut acc = delta;
    out.push(acc);
    for m in 2..=m_max {
        let n = m - 1;
        if n <= usable {
            let cum = trace.derivatives[n - 1];
            // An overflowed cocycle means the term is far below roundoff.
            if cabs(cum) <= real(COCYCLE_OVERFLOW) {
                let y = trace.points[n - 1].finite().expect("usable points are finite");
                acc += ratio.eval(f, y) / cum;
            }
        } else if !matches!(trace.termination, Termination::HitInfinity(_)) {
            break;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Series limit along a tangent vector of the local space. Polynomial slots
/// are the critical values v_1..v_p; rational slots are (sigma, b, v_1..v_p)
/// with p the number of finite critical values.
pub fn direction_limit<T: Scalar>(
    f: &Map<T>,
    tangent: &[Complex<T>],
    j: usize,
    tol: T,
) -> Result<SeriesValue<T>> {
    let profile = f.critical_profile()?;
    if j == 0 || j > profile.len() {
        return Err(Error::invalid(format!("row index j={j} out of range 1..={}", profile.len())));
    }
    let (ratio, delta) = match f {
        Map::Poly(g) => {
            let p = profile.len();
            if tangent.len() != p {
                return Err(Error::invalid(format!(
                    "tangent has {} slots, expected {p}",
                    tangent.len()
                )));
            }
            let mut num = ComplexPoly::zero();
            for (k, &a) in tangent.iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                let part = partial_from_profile(&profile, g.degree(), k + 1)?;
                num = num.add(&part.poly.scale(a));
            }
            (RatioEval::Poly(num), tangent[j - 1])
        }
        Map::Rational(g) => {
            let p = profile.finite_count();
            if tangent.len() != p + 2 {
                return Err(Error::invalid(format!(
                    "tangent has {} slots, expected {} (sigma, b, then v slots)",
                    tangent.len(),
                    p + 2
                )));
            }
            let mut num = ComplexPoly::zero();
            for k in 1..=p {
                let a = tangent[k + 1];
                if a.is_zero() {
                    continue;
                }
                let part = rational_partial_from_profile(g, &profile, RatDirection::V(k))?;
                num = num.add(&part.p_tilde.expect("value direction").scale(a));
            }
            let delta = if j <= p { tangent[j + 1] } else { Complex::zero() };
            (RatioEval::Rational { lin: [tangent[0], tangent[1]], num }, delta)
        }
    };
    series_from_orbit(f, profile.values[j - 1], delta, &ratio, tol, DEFAULT_MAX_TERMS)
}

/// Distinct finite points visited after `burn_in` steps, deduplicated at
/// 1e-6 and sorted lexicographically. A cheap picture of the omega-limit set.
pub fn omega_estimate<T: Scalar>(trace: &OrbitTrace<T>, burn_in: usize) -> Vec<Complex<T>> {
    let start = burn_in.min(trace.points.len());
    let mut out: Vec<Complex<T>> = Vec::new();
    for pt in &trace.points[start..] {
        if let Some(z) = pt.finite() {
            if out.iter().all(|&w| cabs(z - w) > real(1e-6)) {
                out.push(z);
            }
        }
    }
    out.sort_by(lex_cmp);
    out
}

// ---------------------------------------------------------------------------
// Series in a Moebius-conjugated space

/// L(c_j, v_k) evaluated inside the conjugated space M^{-1} f M, built from
/// chain-rule cocycles rather than from the original-space value. Relative to
/// the original series the value picks up (M^{-1})'(v_j)/(M^{-1})'(v_k).
///
/// Orbits through a pole of f continue through M^{-1}(infinity); from the
/// step the original orbit reaches infinity, every term vanishes identically
/// (the numerator decays like 1/w^3 at infinity), so rows with v_j = infinity
/// come out as exact standard basis rows.
pub fn mspace_similarity_factor<T: Scalar>(
    conj: &ConjugatedMap<T>,
    j: usize,
    k: usize,
    tol: T,
    max_terms: usize,
) -> Result<SeriesValue<T>> {
    // conj.profile lives in the M coordinate; the orbit, the Hermite data and
    // the conversion factor all belong to the base coordinate, so recompute.
    let base = &conj.base;
    let base_profile = rational_critical_profile(base)?;
    let p = base_profile.finite_count();
    if j == 0 || j > base_profile.len() {
        return Err(Error::invalid(format!(
            "row index j={j} out of range 1..={}",
            base_profile.len()
        )));
    }
    if k == 0 || k > p {
        return Err(Error::invalid(format!("column index k={k} out of range 1..={p}")));
    }
    let delta: Complex<T> = if j == k { Complex::one() } else { Complex::zero() };
    let m = &conj.mobius;
    let minv = m.inverse();
    let det = m.det();
    let vk = base_profile.values[k - 1].finite().expect("k indexes a finite critical value");
    let inv_dvk = m.inverse_derivative(vk);
    if inv_dvk.is_zero() {
        return Err(Error::invalid("v_k sits at M(infinity); the conversion factor vanishes"));
    }
    let Some(mut y) = base_profile.values[j - 1].finite() else {
        return Ok(SeriesValue {
            value: delta,
            tail_bound: T::zero(),
            terms_used: 0,
            status: SeriesStatus::TruncatedAtInfinity,
        });
    };

    let p_tilde = rational_partial_from_profile(base, &base_profile, RatDirection::V(k))?
        .p_tilde
        .expect("value direction carries a numerator");
    let crit_tol = real::<T>(CRITICAL_PROXIMITY) * base_profile.scale();
    let w_poly = base.w_poly();
    let q_poly = base.q_poly();
    let p_hat = base.p_hat();

    // cum = (Mf^{n-1})'(vtilde_j) over the conjugated map, accumulated from
    // the pole-safe factor det^2 W(y) / ((aQ(y) - cPhat(y))^2 (c ytilde + d)^2).
    let mut cum = Complex::<T>::one();
    let mut terms: Vec<Complex<T>> = Vec::new();
    let mut exact = false;
    let mut barrier = false;
    for _ in 0..max_terms {
        let yt = match minv.apply(SpherePoint::Finite(y)) {
            SpherePoint::Finite(w) => w,
            SpherePoint::Infinity => {
                return Err(Error::invalid(
                    "orbit passed through M(infinity); choose a different probe",
                ))
            }
        };
        if cabs(cum) > real(COCYCLE_OVERFLOW) {
            break;
        }
        let mobden = m.c * yt + m.d;
        terms.push(
            p_tilde.eval(y) * mobden * mobden / (det * w_poly.eval(y) * inv_dvk * cum),
        );
        if base.pole_distance(y) <= real::<T>(POLE_PROXIMITY) * (T::one() + cabs(y)) {
            // The original orbit reaches infinity next step and stays there;
            // all remaining conjugated terms are identically zero.
            exact = true;
            break;
        }
        let den = m.a * q_poly.eval(y) - m.c * p_hat.eval(y);
        if den.is_zero() {
            return Err(Error::invalid(
                "orbit image hit M(infinity); choose a different probe",
            ));
        }
        cum *= det * det * w_poly.eval(y) / (den * den * mobden * mobden);
        let z = base.eval(y);
        if cabs(z) > real(INFINITY_THRESHOLD) {
            break;
        }
        if base_profile.points.iter().any(|&c| cabs(z - c) < crit_tol) {
            barrier = true;
            break;
        }
        y = z;
    }
    finish_series("conjugated similarity series", delta, &terms, exact, barrier, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratmap::choose_probe_mobius;
    use crate::scalar::cx;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly64(pairs: &[(f64, f64)]) -> ComplexPoly<f64> {
        ComplexPoly::new(pairs.iter().map(|&(re, im)| cx(re, im)).collect())
    }

    fn cheb() -> Map<f64> {
        PolyMap::from_real_coeffs(2, &[-2.0]).unwrap().into()
    }

    fn misiurewicz() -> Map<f64> {
        PolyMap::new(2, vec![cx(0.0, 1.0)]).unwrap().into()
    }

    fn cubic() -> Map<f64> {
        PolyMap::from_real_coeffs(3, &[-3.0, 0.0]).unwrap().into()
    }

    // sigma = 1, b = 2: the orbit of the critical value 0 steps onto the
    // pole at the origin immediately.
    fn rat_orbit_inf() -> RationalMap<f64> {
        RationalMap::new(cx(1.0, 0.0), cx(2.0, 0.0), poly64(&[(1.0, 0.0)]), poly64(&[(1.0, 0.0), (0.0, 0.0)]))
            .unwrap()
    }

    // z + 1/z^2: the double root of Q makes one critical point pole-like,
    // with critical value infinity.
    fn rat_vinf() -> RationalMap<f64> {
        RationalMap::new(
            cx(1.0, 0.0),
            cx(0.0, 0.0),
            poly64(&[(1.0, 0.0)]),
            poly64(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.0)]),
        )
        .unwrap()
    }

    #[test]
    fn chebyshev_trace_matches_hand_values() {
        let trace = iterate_orbit(&cheb(), cx(-2.0, 0.0), 3, None).unwrap();
        assert_eq!(trace.termination, Termination::Budget);
        let pts: Vec<_> = trace.points.iter().map(|p| p.finite().unwrap()).collect();
        assert_eq!(pts, vec![cx(-2.0, 0.0), cx(2.0, 0.0), cx(2.0, 0.0), cx(2.0, 0.0)]);
        assert_eq!(
            trace.derivatives,
            vec![cx(1.0, 0.0), cx(-4.0, 0.0), cx(-16.0, 0.0), cx(-64.0, 0.0)]
        );
        assert_eq!(trace.terms[0], 1.0);
    }

    #[test]
    fn orbit_escape_flags_unbounded_polynomial() {
        let trace = iterate_orbit(&cheb(), cx(3.0, 0.0), 10, None).unwrap();
        assert_eq!(trace.termination, Termination::Escaped(1));
        assert_eq!(trace.points.len(), 2);
        assert_eq!(trace.points[1].finite().unwrap(), cx(7.0, 0.0));
        assert_eq!(trace.derivatives[1], cx(6.0, 0.0));
    }

    #[test]
    fn orbit_flags_critical_proximity() {
        let trace = iterate_orbit(&cheb(), cx(2.0f64.sqrt(), 0.0), 10, None).unwrap();
        assert_eq!(trace.termination, Termination::HitCritical(1));
        assert_eq!(trace.points.len(), 2);
        assert!(trace.points[1].finite().unwrap().norm() < 1e-12);
    }

    #[test]
    fn orbit_derivative_recurrence_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for f in [cheb(), misiurewicz(), cubic()] {
            for _ in 0..8 {
                let v = cx::<f64>(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                let trace = iterate_orbit(&f, v, 25, Some(1e8)).unwrap();
                let denom0 = 1.0 + v.norm_sqr();
                for n in 0..trace.derivatives.len() - 1 {
                    let y = trace.points[n].finite().unwrap();
                    let expect = trace.derivatives[n] * f.deriv(y);
                    let err = (trace.derivatives[n + 1] - expect).norm();
                    assert!(err <= 1e-12 * expect.norm().max(1.0), "cocycle broke at step {n}");
                    assert_eq!(trace.points[n + 1].finite().unwrap(), f.eval(y));
                }
                for (n, &s) in trace.terms.iter().enumerate() {
                    let y = trace.points[n].finite().unwrap();
                    let expect = (1.0 + y.norm_sqr()) / (denom0 * trace.derivatives[n].norm());
                    assert!((s - expect).abs() <= 1e-12 * expect.max(1.0));
                }
            }
        }
    }

    #[test]
    fn rational_orbit_hits_infinity_exactly() {
        let f: Map<f64> = rat_orbit_inf().into();
        let trace = iterate_orbit(&f, cx(0.0, 0.0), 50, None).unwrap();
        assert_eq!(trace.termination, Termination::HitInfinity(1));
        assert_eq!(trace.points.len(), 2);
        assert!(trace.points[1].is_infinite());
        assert_eq!(trace.derivatives.len(), 1);

        // z + 1/z drifts outward without ever escaping or hitting a pole.
        let g: Map<f64> = RationalMap::new(
            cx(1.0, 0.0),
            cx(0.0, 0.0),
            poly64(&[(1.0, 0.0)]),
            poly64(&[(1.0, 0.0), (0.0, 0.0)]),
        )
        .unwrap()
        .into();
        let trace = iterate_orbit(&g, cx(2.0, 0.0), 50, None).unwrap();
        assert_eq!(trace.termination, Termination::Budget);
        assert!(trace.points.iter().all(|p| !p.is_infinite()));
    }

    #[test]
    fn chebyshev_series_hits_closed_form() {
        let sv = similarity_factor_with(&cheb(), 1, RatDirection::V(1), 1e-12, 60).unwrap();
        assert_eq!(sv.status, SeriesStatus::Converged);
        assert!(sv.terms_used <= 60);
        assert!((sv.value - cx(2.0 / 3.0, 0.0)).norm() <= 1e-12, "value {}", sv.value);
        assert!(sv.tail_bound <= 1e-12);

        // Direct summation oracle: p_1 is the constant 1, the orbit sits at
        // the fixed point 2 after one step.
        let f = cheb();
        let mut acc = cx(1.0, 0.0);
        let mut y = cx(-2.0, 0.0);
        let mut cum = cx(1.0, 0.0);
        for _ in 0..sv.terms_used {
            let next = f.eval(y);
            let term = 1.0 / (f.deriv(y) * cum);
            acc += term;
            cum *= f.deriv(y);
            y = next;
        }
        assert!((sv.value - acc).norm() <= 1e-14);
    }

    #[test]
    fn misiurewicz_series_matches_two_cycle_value() {
        let sv = similarity_factor_with(&misiurewicz(), 1, RatDirection::V(1), 1e-10, 200).unwrap();
        assert_eq!(sv.status, SeriesStatus::Converged);
        assert!((sv.value - cx(0.8, -0.4)).norm() <= 1e-10, "value {}", sv.value);
    }

    #[test]
    fn cubic_series_fills_the_similarity_matrix() {
        let f = cubic();
        let expect = [[0.9375, 0.1875], [0.1875, 0.9375]];
        for j in 1..=2 {
            for k in 1..=2 {
                let sv = similarity_factor(&f, j, RatDirection::V(k), 1e-10).unwrap();
                assert_eq!(sv.status, SeriesStatus::Converged);
                let err = (sv.value - cx(expect[j - 1][k - 1], 0.0)).norm();
                assert!(err <= 1e-10, "entry ({j},{k}) off by {err:.2e}");
            }
        }
    }

    #[test]
    fn ratio_sequence_prefix_and_tail_agreement() {
        let f = cubic();
        let seq = ratio_sequence(&f, 1, RatDirection::V(2), 41).unwrap();
        assert_eq!(seq.len(), 41);
        assert_eq!(seq[0], cx(0.0, 0.0));
        // One term: p_2(v_1)/f'(v_1) = (3/2)/9.
        assert!((seq[1] - cx(1.5 / 9.0, 0.0)).norm() <= 1e-14);
        let sv = similarity_factor_with(&f, 1, RatDirection::V(2), 1e-12, 40).unwrap();
        assert_eq!(sv.terms_used, 40);
        assert!((seq[40] - sv.value).norm() <= sv.tail_bound + 1e-15);
        assert!((sv.value - cx(0.1875, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn direction_limits_collapse_tangent_combinations() {
        let f = cubic();
        let sv = direction_limit(&f, &[cx(1.0, 0.0), cx(1.0, 0.0)], 1, 1e-10).unwrap();
        assert!((sv.value - cx(1.125, 0.0)).norm() <= 1e-10);
        // (1, -5) annihilates row 1 but not row 2.
        let sv = direction_limit(&f, &[cx(1.0, 0.0), cx(-5.0, 0.0)], 1, 1e-10).unwrap();
        assert!(sv.value.norm() <= 1e-10, "row 1 along (1,-5) = {}", sv.value);
        let sv = direction_limit(&f, &[cx(1.0, 0.0), cx(-5.0, 0.0)], 2, 1e-10).unwrap();
        assert!((sv.value - cx(-4.5, 0.0)).norm() <= 1e-10);
    }

    #[test]
    fn series_truncates_exactly_at_pole_hit() {
        let f: Map<f64> = rat_orbit_inf().into();
        // Row 1: the critical value 0 is itself the pole, so l = 1 and the
        // sums are exact after a single term.
        let cases = [
            (RatDirection::V(1), cx(0.5, 0.0)),
            (RatDirection::V(2), cx(-0.5, 0.0)),
            (RatDirection::Sigma, cx(0.0, 0.0)),
            (RatDirection::B, cx(1.0, 0.0)),
        ];
        for (which, want) in cases {
            let sv = similarity_factor(&f, 1, which, 1e-12).unwrap();
            assert_eq!(sv.status, SeriesStatus::TruncatedAtInfinity, "{which}");
            assert_eq!(sv.tail_bound, 0.0);
            assert_eq!(sv.terms_used, 1);
            assert!((sv.value - want).norm() <= 1e-12, "{which}: {} vs {want}", sv.value);
        }
        let seq = ratio_sequence(&f, 1, RatDirection::V(1), 6).unwrap();
        assert_eq!(seq.len(), 6);
        assert_eq!(seq[0], cx(1.0, 0.0));
        for m in 1..6 {
            assert_eq!(seq[m], seq[1], "entries must freeze beyond the hitting time");
        }
    }

    #[test]
    fn summability_separates_chebyshev_from_parabolic() {
        let trace = iterate_orbit(&cheb(), cx(-2.0, 0.0), 200, None).unwrap();
        let diag = summability_diagnostic(&trace, 1e-9);
        assert_eq!(diag.status, SeriesStatus::Converged);
        // s_0 = 1 and s_n = 4^{-n} on the fixed orbit, summing to 4/3.
        assert!((diag.value.re - 4.0 / 3.0).abs() <= 1e-10);

        let parabolic: Map<f64> = PolyMap::from_real_coeffs(2, &[0.25]).unwrap().into();
        let trace = iterate_orbit(&parabolic, cx(0.25, 0.0), 600, None).unwrap();
        assert_eq!(trace.termination, Termination::Budget);
        let diag = summability_diagnostic(&trace, 1e-9);
        assert_eq!(diag.status, SeriesStatus::Diverged);
    }

    #[test]
    fn diverging_series_is_reported_not_summed() {
        // The parabolic quadratic: the critical orbit creeps into the fixed
        // point 1/2, derivatives decay polynomially and the terms grow. The
        // block test must refuse the sum.
        let parabolic: Map<f64> = PolyMap::from_real_coeffs(2, &[0.25]).unwrap().into();
        let err =
            similarity_factor_with(&parabolic, 1, RatDirection::V(1), 1e-9, 600).unwrap_err();
        assert!(matches!(err, Error::DivergenceDetected { .. }), "got {err}");
    }

    #[test]
    fn attracted_to_infinity_means_no_certificate() {
        // 2z + 1/z: infinity attracts (multiplier 1/2). The orbit leaves the
        // far field quickly; the terms stay O(1), so the series can neither
        // converge nor be truncated exactly.
        let f: Map<f64> = RationalMap::new(
            cx(2.0, 0.0),
            cx(0.0, 0.0),
            poly64(&[(1.0, 0.0)]),
            poly64(&[(1.0, 0.0), (0.0, 0.0)]),
        )
        .unwrap()
        .into();
        let trace = iterate_orbit(&f, cx(2.0, 0.0).scale(2.0f64.sqrt()), 400, None).unwrap();
        assert!(matches!(trace.termination, Termination::Escaped(_)));
        let sv = similarity_factor_with(&f, 1, RatDirection::Sigma, 1e-9, 400).unwrap();
        assert_eq!(sv.status, SeriesStatus::BudgetExhausted);
        assert!(sv.tail_bound.is_infinite());
    }

    #[test]
    fn omega_estimate_collects_the_limit_cycle() {
        let trace = iterate_orbit(&misiurewicz(), cx(0.0, 1.0), 40, None).unwrap();
        let omega = omega_estimate(&trace, 2);
        assert_eq!(omega.len(), 2);
        assert!((omega[0] - cx(-1.0, 1.0)).norm() <= 1e-9);
        assert!((omega[1] - cx(0.0, -1.0)).norm() <= 1e-9);

        let trace = iterate_orbit(&cheb(), cx(-2.0, 0.0), 40, None).unwrap();
        let omega = omega_estimate(&trace, 1);
        assert_eq!(omega.len(), 1);
        assert!((omega[0] - cx(2.0, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn conjugated_series_obeys_the_conversion_rule() {
        let f = rat_orbit_inf();
        let conj = choose_probe_mobius(&f, 40).unwrap();
        let map: Map<f64> = f.clone().into();
        let profile = rational_critical_profile(&f).unwrap();
        let v1 = profile.values[0].finite().unwrap();
        for k in 1..=2 {
            let lhs = mspace_similarity_factor(&conj, 1, k, 1e-9, 50).unwrap();
            assert_eq!(lhs.status, SeriesStatus::TruncatedAtInfinity);
            let base = similarity_factor(&map, 1, RatDirection::V(k), 1e-12).unwrap();
            let vk = profile.values[k - 1].finite().unwrap();
            let factor =
                conj.mobius.inverse_derivative(v1) / conj.mobius.inverse_derivative(vk);
            let want = base.value * factor;
            assert!(
                (lhs.value - want).norm() <= 1e-9,
                "k={k}: {} vs {want}",
                lhs.value
            );
        }
    }

    #[test]
    fn conjugated_series_gives_exact_basis_rows_at_infinity() {
        let f = rat_vinf();
        let conj = choose_probe_mobius(&f, 40).unwrap();
        let profile = rational_critical_profile(&f).unwrap();
        let j = profile.len(); // the pole-critical row, critical value at infinity
        assert!(profile.values[j - 1].is_infinite());
        for k in 1..=profile.finite_count() {
            let sv = mspace_similarity_factor(&conj, j, k, 1e-9, 50).unwrap();
            assert_eq!(sv.status, SeriesStatus::TruncatedAtInfinity);
            assert_eq!(sv.terms_used, 0);
            assert_eq!(sv.value, cx(0.0, 0.0), "row at infinity must be the exact delta row");
        }
    }

    #[test]
    fn fd_along_tangent_matches_ratio_for_moderate_depth() {
        // Central differences along f_t = f + t p_k with step 1e-7. The
        // perturbed critical point is re-found from the perturbed map, and
        // the quotient must match ratio_sequence[m] (f^{m-1})'(v_j).
        let h = 1e-7;
        for (f, depth) in [(cheb(), 6usize), (cubic(), 4usize)] {
            let Map::Poly(ref g) = f else { unreachable!() };
            let profile = f.critical_profile().unwrap();
            for j in 1..=profile.len() {
                for k in 1..=profile.len() {
                    let pk = partial_from_profile(&profile, g.degree(), k).unwrap().poly;
                    let seq = ratio_sequence(&f, j, RatDirection::V(k), depth + 1).unwrap();
                    let vj = profile.values[j - 1].finite().unwrap();
                    let trace = iterate_orbit(&f, vj, depth, Some(1e8)).unwrap();
                    for m in 1..=depth {
                        let fd = {
                            let plus = perturbed_orbit_value(g, &pk, h, profile.points[j - 1], m);
                            let minus =
                                perturbed_orbit_value(g, &pk, -h, profile.points[j - 1], m);
                            (plus - minus) / cx(2.0 * h, 0.0)
                        };
                        let want = seq[m - 1] * trace.derivatives[m - 1];
                        let rel = (fd - want).norm() / want.norm().max(1.0);
                        assert!(rel <= 1e-5, "j={j} k={k} m={m}: rel {rel:.2e}");
                    }
                }
            }
        }
    }

    /// f_t^m(c_j(t)) for f_t = f + t p_k, with c_j(t) polished by Newton on
    /// f_t' from the unperturbed critical point.
    fn perturbed_orbit_value(
        f: &PolyMap<f64>,
        pk: &ComplexPoly<f64>,
        t: f64,
        cj: Complex<f64>,
        m: usize,
    ) -> Complex<f64> {
        let ft = f.poly().add(&pk.scale(cx(t, 0.0)));
        let dft = ft.derivative();
        let ddft = dft.derivative();
        let mut c = cj;
        for _ in 0..40 {
            let step = dft.eval(c) / ddft.eval(c);
            c -= step;
            if step.norm() < 1e-15 {
                break;
            }
        }
        let mut y = c;
        for _ in 0..m {
            y = ft.eval(y);
        }
        y
    }
}
