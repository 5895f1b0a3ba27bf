//! Similarity-factor matrices over the summable critical points, their rank
//! verdicts, and multiplier rows from periodic orbits.
//!
//! Rows are critical slots whose orbit passes the summability test, columns
//! the chart directions that survive the case normalization: the polynomial
//! family keeps all p value slots, the rational cases drop the pinned
//! column(s) and case H adds the sigma column in front. A slot whose
//! critical value sits at infinity contributes an exact standard basis row;
//! such rows never enter the numeric matrix and are tracked by the reduction
//! accounting instead, which reports how much rank they guarantee on top of
//! the assembled block.
//!
//! Every entry is a truncated series and carries its tail bound. The rank
//! verdict is deliberately one-sided: `maximal` is only reported when the
//! smallest singular value clears the tolerance plus the total tail budget,
//! `false` only when no tail perturbation could rescue it, and anything in
//! between is an error rather than a guess.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::Error;
use crate::newton::{newton_solve, NewtonOptions};
use crate::orbit::{
    iterate_orbit, similarity_factor_in, summability_diagnostic, Map, SeriesStatus, SeriesValue,
    DEFAULT_MAX_TERMS, INFINITY_THRESHOLD,
};
use crate::poly::ComplexPoly;
use crate::polymap::{partial_from_profile, CriticalProfile};
use crate::ratmap::{
    classify, fixed_points, rational_critical_profile, rational_partial_from_profile,
    RatDirection, SpaceCase, SpaceClassification,
};
use crate::roots::find_roots;
use crate::scalar::{cabs, lex_cmp, real, to_f64, Scalar, SpherePoint};
use crate::svd::{singular_values, SingularSpectrum};
use crate::Result;

/// Relative cutoff handed to the SVD when counting the numerical rank.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Multipliers within this distance of 1 make the cycle-response system
/// singular; such orbits are excluded everywhere.
pub const PARABOLIC_BAND: f64 = 1e-8;

/// Default step for the finite-difference multiplier cross-check.
pub const FD_STEP: f64 = 1e-6;

/// Periods above this are refused: the candidate set for period T of a
/// degree-d map has about d^T points.
pub const MAX_PERIOD: usize = 6;

// Orbit-membership tolerances, relative to 1 + |point|.
const ORBIT_CHECK: f64 = 1e-8;
const CYCLE_MATCH: f64 = 1e-6;
const CYCLE_MERGE: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Assembly coordinates

/// Which family and normal form the matrix lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixCase {
    /// Monic centered polynomials; every value slot is a column.
    Poly,
    /// Rational, a fixed point with multiplier outside {0, 1} at infinity.
    H,
    /// Rational, nondegenerate parabolic at infinity.
    NN,
    /// Rational, degenerate parabolic at infinity.
    ND,
}

impl MatrixCase {
    fn space_case(self) -> Option<SpaceCase> {
        match self {
            MatrixCase::Poly => None,
            MatrixCase::H => Some(SpaceCase::H),
            MatrixCase::NN => Some(SpaceCase::NN),
            MatrixCase::ND => Some(SpaceCase::ND),
        }
    }
}

impl std::fmt::Display for MatrixCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MatrixCase::Poly => write!(f, "poly"),
            MatrixCase::H => write!(f, "H"),
            MatrixCase::NN => write!(f, "NN"),
            MatrixCase::ND => write!(f, "ND"),
        }
    }
}

/// The coordinates a matrix is assembled in. `map` is always the input map:
/// entries are its own similarity-factor series, which the normalization
/// changes only by nonzero row and column factors (so ranks agree). What the
/// classification contributes is the slot order of `profile`: the base
/// critical slots permuted so the pinned value(s) close the finite block,
/// which lets the case reduction drop trailing columns.
#[derive(Debug, Clone)]
pub struct AssemblySpace<T: Scalar> {
    pub map: Map<T>,
    pub profile: CriticalProfile<T>,
    pub case: MatrixCase,
    /// Present for rational maps; records the normalizer and the anchor.
    pub classification: Option<SpaceClassification<T>>,
}

/// Classifies the map and fixes the coordinates the matrix is built in.
/// The requested case must match what the map actually is.
pub fn assembly_space<T: Scalar>(f: &Map<T>, case: MatrixCase) -> Result<AssemblySpace<T>> {
    match (f, case.space_case()) {
        (Map::Poly(_), None) => Ok(AssemblySpace {
            map: f.clone(),
            profile: f.critical_profile()?,
            case,
            classification: None,
        }),
        (Map::Poly(_), Some(_)) => Err(Error::invalid(format!(
            "case {case} describes rational maps; polynomial matrices use the poly case"
        ))),
        (Map::Rational(_), None) => {
            Err(Error::invalid("the poly case does not apply to rational maps"))
        }
        (Map::Rational(g), Some(want)) => {
            let cls = classify(g)?;
            if cls.case != want {
                return Err(Error::invalid(format!(
                    "map classifies as case {} but case {case} was requested",
                    cls.case
                )));
            }
            let profile = classified_base_profile(g, &cls)?;
            Ok(AssemblySpace { map: f.clone(), profile, case, classification: Some(cls) })
        }
    }
}

/// The base profile in the classification's slot order: each normalized
/// critical point is pushed back through the normalizer and matched against
/// the base critical set.
fn classified_base_profile<T: Scalar>(
    g: &crate::ratmap::RationalMap<T>,
    cls: &SpaceClassification<T>,
) -> Result<CriticalProfile<T>> {
    let base = rational_critical_profile(g)?;
    let scale = base.scale();
    let mut points = Vec::with_capacity(base.len());
    let mut multiplicities = Vec::with_capacity(base.len());
    let mut values = Vec::with_capacity(base.len());
    let mut used = vec![false; base.len()];
    for &ct in &cls.profile.points {
        let back = match cls.normalizer.apply(SpherePoint::Finite(ct)) {
            SpherePoint::Finite(z) => z,
            SpherePoint::Infinity => {
                return Err(Error::invalid("a normalized critical point maps back to infinity"))
            }
        };
        let mut best: Option<(usize, T)> = None;
        for (j, &c) in base.points.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = cabs(c - back);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        let Some((j, d)) = best else {
            return Err(Error::invalid("critical point count changed under normalization"));
        };
        if d > real::<T>(1e-6) * scale {
            return Err(Error::invalid(
                "could not match a normalized critical point to the base profile",
            ));
        }
        used[j] = true;
        points.push(base.points[j]);
        multiplicities.push(base.multiplicities[j]);
        values.push(base.values[j]);
    }
    // Downstream indexing needs the finite block contiguous. It can split
    // only when a critical value coincides with the classification anchor, a
    // coincidence this assembly does not support.
    let fin = values.iter().take_while(|v: &&SpherePoint<T>| !v.is_infinite()).count();
    if values[fin..].iter().any(|v| !v.is_infinite()) {
        return Err(Error::invalid(
            "slot order mixes finite and infinite critical values after normalization",
        ));
    }
    Ok(CriticalProfile { points, multiplicities, values })
}

/// Column labels of the assembled matrix. The pinned slots (the last finite
/// value, plus the second-to-last for ND) carry no free coordinate and are
/// omitted; case H exposes sigma as the leading column.
pub fn case_columns<T: Scalar>(space: &AssemblySpace<T>) -> Vec<RatDirection> {
    let p = space.profile.finite_count();
    match space.case {
        MatrixCase::Poly => (1..=p).map(RatDirection::V).collect(),
        MatrixCase::H => std::iter::once(RatDirection::Sigma)
            .chain((1..p).map(RatDirection::V))
            .collect(),
        MatrixCase::NN => (1..p).map(RatDirection::V).collect(),
        MatrixCase::ND => (1..p.saturating_sub(1)).map(RatDirection::V).collect(),
    }
}

fn summability_ok<T: Scalar>(space: &AssemblySpace<T>, j: usize, tol: T) -> Result<bool> {
    let Some(v) = space.profile.values[j - 1].finite() else {
        // The orbit sits at infinity from the start; the series is exact.
        return Ok(true);
    };
    let trace = iterate_orbit(&space.map, v, DEFAULT_MAX_TERMS, Some(real(INFINITY_THRESHOLD)))?;
    let diag = summability_diagnostic(&trace, tol);
    Ok(matches!(diag.status, SeriesStatus::Converged | SeriesStatus::TruncatedAtInfinity))
}

/// Profile slots (1-based) whose critical orbit passes the summability test.
/// Slots with value at infinity pass trivially.
pub fn summable_indices<T: Scalar>(space: &AssemblySpace<T>, tol: T) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for j in 1..=space.profile.len() {
        if summability_ok(space, j, tol)? {
            out.push(j);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The matrix

/// What a matrix row is: a summable critical slot, or a periodic orbit
/// contributing its multiplier derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    Critical(usize),
    Orbit(usize),
}

/// Bookkeeping for the rows that never reach the numeric matrix. A slot with
/// critical value at infinity is an exact standard basis row whose pivot
/// column is dropped by the case reduction; each such row contributes one
/// unit of rank with no numerical doubt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionAccounting {
    /// Requested summable rows.
    pub summable: usize,
    /// Rows with finite critical value, the ones the matrix keeps.
    pub finite_rows: usize,
    /// Slots whose critical value is infinity, in row order.
    pub infinity_rows: Vec<usize>,
    /// (summable - finite_rows) + numerical rank of the kept block.
    pub guaranteed_rank: usize,
}

#[derive(Debug, Clone)]
pub struct TransversalityMatrix<T: Scalar> {
    pub case: MatrixCase,
    pub rows: Vec<RowLabel>,
    pub columns: Vec<RatDirection>,
    pub entries: DMatrix<Complex<T>>,
    /// Tail bound of the series behind each entry; zero for exact rows.
    pub tail_bounds: DMatrix<T>,
    pub spectrum: SingularSpectrum<T>,
    pub accounting: ReductionAccounting,
}

impl<T: Scalar> TransversalityMatrix<T> {
    /// Total series truncation budget: how far the entries could move.
    pub fn tail_budget(&self) -> T {
        self.tail_bounds.iter().fold(T::zero(), |s, &t| s + t)
    }
}

/// Outcome of the conservative rank test.
#[derive(Debug, Clone, Copy)]
pub struct RankVerdict<T: Scalar> {
    pub maximal: bool,
    /// The smallest singular value; infinite when there is nothing numeric
    /// left to doubt.
    pub margin: T,
}

/// Assembles the case-reduced matrix with default tolerances.
pub fn assemble_matrix<T: Scalar + Send + Sync>(
    f: &Map<T>,
    s: &[usize],
    case: MatrixCase,
) -> Result<TransversalityMatrix<T>> {
    assemble_matrix_with(f, s, case, real(1e-12), DEFAULT_MAX_TERMS)
}

/// Same with explicit series tolerance and term budget.
pub fn assemble_matrix_with<T: Scalar + Send + Sync>(
    f: &Map<T>,
    s: &[usize],
    case: MatrixCase,
    tol: T,
    max_terms: usize,
) -> Result<TransversalityMatrix<T>> {
    let space = assembly_space(f, case)?;
    assemble_in(&space, s, tol, max_terms)
}

/// Core assembly against an already-fixed space. `s` lists the summable
/// slots in strictly increasing order; each is re-checked against the
/// summability diagnostic before any series is summed.
pub fn assemble_in<T: Scalar + Send + Sync>(
    space: &AssemblySpace<T>,
    s: &[usize],
    tol: T,
    max_terms: usize,
) -> Result<TransversalityMatrix<T>> {
    let len = space.profile.len();
    for (i, &j) in s.iter().enumerate() {
        if j == 0 || j > len {
            return Err(Error::invalid(format!("row slot {j} out of range 1..={len}")));
        }
        if i > 0 && s[i - 1] >= j {
            return Err(Error::invalid("row slots must be strictly increasing"));
        }
        if !summability_ok(space, j, tol)? {
            return Err(Error::DivergenceDetected {
                what: "summability diagnostic",
                detail: format!("critical slot {j} fails the weak-expansion test"),
            });
        }
    }

    let mut finite_rows = Vec::new();
    let mut infinity_rows = Vec::new();
    for &j in s {
        if space.profile.values[j - 1].is_infinite() {
            infinity_rows.push(j);
        } else {
            finite_rows.push(j);
        }
    }
    let columns = case_columns(space);

    let row_series = |j: usize| -> Result<Vec<SeriesValue<T>>> {
        columns
            .iter()
            .map(|&w| similarity_factor_in(&space.map, &space.profile, j, w, tol, max_terms))
            .collect()
    };
    // Each row is an independent family of series over the same orbit.
    let row_series = &row_series;
    let results: Vec<Result<Vec<SeriesValue<T>>>> = if finite_rows.len() > 1 {
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                finite_rows.iter().map(|&j| scope.spawn(move || row_series(j))).collect();
            handles.into_iter().map(|h| h.join().expect("row worker panicked")).collect()
        })
    } else {
        finite_rows.iter().map(|&j| row_series(j)).collect()
    };
    let mut rows_done = Vec::with_capacity(results.len());
    for r in results {
        rows_done.push(r?);
    }

    let entries = DMatrix::from_fn(rows_done.len(), columns.len(), |r, c| rows_done[r][c].value);
    let tail_bounds =
        DMatrix::from_fn(rows_done.len(), columns.len(), |r, c| rows_done[r][c].tail_bound);
    let spectrum = singular_values(&entries, real(RANK_REL_TOL));
    let accounting = ReductionAccounting {
        summable: s.len(),
        finite_rows: finite_rows.len(),
        guaranteed_rank: (s.len() - finite_rows.len()) + spectrum.rank,
        infinity_rows,
    };
    Ok(TransversalityMatrix {
        case: space.case,
        rows: finite_rows.into_iter().map(RowLabel::Critical).collect(),
        columns,
        entries,
        tail_bounds,
        spectrum,
        accounting,
    })
}

/// Conservative rank test. `maximal` means the smallest singular value
/// clears `tol` even if every entry moved by its full tail bound; `false`
/// means it stays below `tol` under any such move. The undecidable band in
/// between is an error, never a silent answer.
pub fn rank_verdict<T: Scalar>(m: &TransversalityMatrix<T>, tol: T) -> Result<RankVerdict<T>> {
    let budget = m.tail_budget();
    let Some(smin) = m.spectrum.smallest() else {
        // Nothing numeric: whatever the basis rows guarantee is exact.
        return Ok(RankVerdict { maximal: true, margin: real(f64::INFINITY) });
    };
    if smin > tol + budget {
        Ok(RankVerdict { maximal: true, margin: smin })
    } else if smin + budget <= tol {
        Ok(RankVerdict { maximal: false, margin: smin })
    } else {
        Err(Error::Inconclusive { sigma_min: to_f64(smin), tail_budget: to_f64(budget) })
    }
}

// ---------------------------------------------------------------------------
// Periodic orbits

/// A finite cycle with its multiplier. The fixed point at infinity of the
/// rational family is never listed.
#[derive(Debug, Clone)]
pub struct PeriodicOrbitRecord<T: Scalar> {
    /// One full cycle, starting at its lexicographically smallest point;
    /// points[i+1] = f(points[i]) and f(points[T-1]) wraps to points[0].
    pub points: Vec<Complex<T>>,
    pub period: usize,
    /// Product of f' over the cycle. Never within `PARABOLIC_BAND` of 1.
    pub multiplier: Complex<T>,
}

/// All cycles of exact period up to `t_max`, sorted by (period, start).
/// Polynomial cycles come from root clusters of the iterated polynomial
/// minus z; rational cycles from Newton runs on f^T(z) - z seeded on a grid
/// around the critical set (clearing denominators of f^T is numerically
/// explosive). Cycles with multiplier 1 are dropped: every consumer here
/// differentiates the cycle equations, which degenerate exactly there.
pub fn find_periodic_orbits<T: Scalar>(
    f: &Map<T>,
    t_max: usize,
    tol: T,
) -> Result<Vec<PeriodicOrbitRecord<T>>> {
    if t_max == 0 || t_max > MAX_PERIOD {
        return Err(Error::invalid(format!("period cap must be 1..={MAX_PERIOD}, got {t_max}")));
    }
    let mut records = Vec::new();
    for t in 1..=t_max {
        let candidates = match f {
            Map::Poly(g) => {
                let mut iter = g.poly().clone();
                for _ in 1..t {
                    iter = iter.compose(g.poly());
                }
                let shifted = iter.sub(&ComplexPoly::new(vec![Complex::one(), Complex::zero()]));
                find_roots(&shifted, tol.max(real(1e-12)))?
                    .clusters
                    .iter()
                    .map(|cl| cl.center)
                    .collect()
            }
            Map::Rational(g) => rational_period_candidates(g, t, tol)?,
        };
        group_cycles(f, &mut records, candidates, t);
    }
    Ok(records)
}

/// Newton on z - f^t(z) from a deterministic seed set: fixed points,
/// critical points and values, and a square grid spanning the critical set.
fn rational_period_candidates<T: Scalar>(
    g: &crate::ratmap::RationalMap<T>,
    t: usize,
    tol: T,
) -> Result<Vec<Complex<T>>> {
    let profile = rational_critical_profile(g)?;
    let mut seeds: Vec<Complex<T>> = Vec::new();
    for fp in fixed_points(g)? {
        if let Some(z) = fp.point.finite() {
            seeds.push(z);
        }
    }
    seeds.extend(profile.points.iter().copied());
    seeds.extend(profile.finite_values());
    let mut extent = profile.scale();
    for &(p, _) in g.poles() {
        extent = extent.max(T::one() + cabs(p));
    }
    extent *= real(2.0);
    let half = 10i32;
    for ix in -half..=half {
        for iy in -half..=half {
            let sx = extent * real(ix as f64 / half as f64);
            let sy = extent * real(iy as f64 / half as f64);
            seeds.push(Complex::new(sx, sy));
        }
    }

    let accept = |z: Complex<T>, gval: Complex<T>| cabs(gval) <= tol * (T::one() + cabs(z));
    let far = extent * real(1e6);
    let mut found: Vec<Complex<T>> = Vec::new();
    'seed: for &z0 in &seeds {
        let mut z = z0;
        for _ in 0..40 {
            let Some((val, der)) = rational_orbit_jet(g, z, t) else { continue 'seed };
            let gval = val - z;
            if accept(z, gval) {
                if found
                    .iter()
                    .all(|&w| cabs(z - w) > real::<T>(CYCLE_MERGE) * (T::one() + cabs(z)))
                {
                    found.push(z);
                }
                continue 'seed;
            }
            let gder = der - Complex::one();
            if gder.is_zero() {
                continue 'seed;
            }
            z -= gval / gder;
            if cabs(z) > far {
                continue 'seed;
            }
        }
    }
    Ok(found)
}

/// (f^t(z), (f^t)'(z)), bailing out near poles and in the far field.
fn rational_orbit_jet<T: Scalar>(
    g: &crate::ratmap::RationalMap<T>,
    mut z: Complex<T>,
    t: usize,
) -> Option<(Complex<T>, Complex<T>)> {
    let mut der = Complex::<T>::one();
    for _ in 0..t {
        if g.pole_distance(z) <= real::<T>(1e-12) * (T::one() + cabs(z)) {
            return None;
        }
        der *= g.deriv(z);
        z = g.eval(z);
        if !to_f64(cabs(z)).is_finite() || cabs(z) > real(1e12) {
            return None;
        }
    }
    Some((z, der))
}

/// Splits a deduplicated candidate set into cycles of exact period `t`,
/// appending the non-parabolic ones to `records`.
fn group_cycles<T: Scalar>(
    f: &Map<T>,
    records: &mut Vec<PeriodicOrbitRecord<T>>,
    mut candidates: Vec<Complex<T>>,
    t: usize,
) {
    candidates.sort_by(lex_cmp);
    let mut pts: Vec<Complex<T>> = Vec::new();
    for z in candidates {
        if pts.iter().all(|&w| cabs(z - w) > real::<T>(CYCLE_MERGE) * (T::one() + cabs(z))) {
            pts.push(z);
        }
    }
    let near = |a: Complex<T>, b: Complex<T>| {
        cabs(a - b) <= real::<T>(CYCLE_MATCH) * (T::one() + cabs(a))
    };
    let mut used = vec![false; pts.len()];
    for i in 0..pts.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        // Walk the orbit and find the first return to the start.
        let mut orbit = vec![pts[i]];
        let mut minimal = None;
        for k in 1..=t {
            let next = f.eval(orbit[k - 1]);
            if !to_f64(cabs(next)).is_finite() {
                break;
            }
            if near(next, pts[i]) {
                minimal = Some(k);
                break;
            }
            orbit.push(next);
        }
        // Everything on the walk is spoken for, whatever its period.
        for &z in &orbit {
            for (k, &w) in pts.iter().enumerate() {
                if !used[k] && near(z, w) {
                    used[k] = true;
                }
            }
        }
        if minimal != Some(t) {
            continue;
        }
        let start = orbit
            .iter()
            .enumerate()
            .min_by(|a, b| lex_cmp(a.1, b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        orbit.rotate_left(start);
        let multiplier = orbit.iter().fold(Complex::<T>::one(), |m, &z| m * f.deriv(z));
        if cabs(multiplier - Complex::one()) <= real(PARABOLIC_BAND) {
            continue;
        }
        records.push(PeriodicOrbitRecord { points: orbit, period: t, multiplier });
    }
}

// ---------------------------------------------------------------------------
// Multiplier derivatives

/// A chart direction as a vector field u = (d/ds) f_s along the orbit,
/// together with its z-derivative (needed for the multiplier response).
enum DirectionField<T: Scalar> {
    /// u is a polynomial; covers the poly value slots.
    Num { num: ComplexPoly<T>, num_d: ComplexPoly<T> },
    /// u = num / Q^2; the rational value slots.
    OverQ2 { num: ComplexPoly<T>, num_d: ComplexPoly<T> },
    /// u = z f'(z) / sigma: moves sigma, keeps b and every value fixed.
    Sigma,
    /// u = f'(z) / sigma: moves b alone.
    B,
}

impl<T: Scalar> DirectionField<T> {
    /// (u(z), u'(z)).
    fn eval(&self, f: &Map<T>, z: Complex<T>) -> (Complex<T>, Complex<T>) {
        match (self, f) {
            (DirectionField::Num { num, num_d }, _) => (num.eval(z), num_d.eval(z)),
            (DirectionField::OverQ2 { num, num_d }, Map::Rational(g)) => {
                let q = g.q_poly().eval(z);
                let qd = g.q_poly().derivative().eval(z);
                let n = num.eval(z);
                let u = n / (q * q);
                let du = (num_d.eval(z) * q - n * qd * real::<T>(2.0)) / (q * q * q);
                (u, du)
            }
            (DirectionField::Sigma, Map::Rational(g)) => {
                let s = g.sigma();
                ((z * f.deriv(z)) / s, (f.deriv(z) + z * second_derivative(f, z)) / s)
            }
            (DirectionField::B, Map::Rational(g)) => {
                (f.deriv(z) / g.sigma(), second_derivative(f, z) / g.sigma())
            }
            _ => unreachable!("direction field paired with the wrong map kind"),
        }
    }
}

fn direction_field<T: Scalar>(
    f: &Map<T>,
    profile: &CriticalProfile<T>,
    which: RatDirection,
) -> Result<DirectionField<T>> {
    match (f, which) {
        (Map::Poly(g), RatDirection::V(k)) => {
            let num = partial_from_profile(profile, g.degree(), k)?.poly;
            let num_d = num.derivative();
            Ok(DirectionField::Num { num, num_d })
        }
        (Map::Poly(_), _) => {
            Err(Error::invalid("sigma and b directions exist only for rational maps"))
        }
        (Map::Rational(g), RatDirection::V(k)) => {
            let num = rational_partial_from_profile(g, profile, RatDirection::V(k))?
                .p_tilde
                .expect("value direction carries a numerator");
            let num_d = num.derivative();
            Ok(DirectionField::OverQ2 { num, num_d })
        }
        (Map::Rational(_), RatDirection::Sigma) => Ok(DirectionField::Sigma),
        (Map::Rational(_), RatDirection::B) => Ok(DirectionField::B),
    }
}

fn second_derivative<T: Scalar>(f: &Map<T>, z: Complex<T>) -> Complex<T> {
    match f {
        Map::Poly(g) => g.derivative_poly().derivative().eval(z),
        Map::Rational(g) => {
            let w = g.w_poly();
            let q = g.q_poly();
            let qv = q.eval(z);
            (w.derivative().eval(z) * qv - w.eval(z) * q.derivative().eval(z) * real::<T>(2.0))
                / (qv * qv * qv)
        }
    }
}

/// Checks that `orbit` really is a cycle of `f` with the stated multiplier,
/// away from the parabolic degeneracy. A multiplier at 0 is allowed only
/// when the cycle contains exactly one critical point and that point is
/// simple, so the cycle (and its multiplier) still moves smoothly with the
/// chart.
fn validate_orbit<T: Scalar>(
    f: &Map<T>,
    profile: &CriticalProfile<T>,
    orbit: &PeriodicOrbitRecord<T>,
) -> Result<()> {
    let t = orbit.period;
    if t == 0 || orbit.points.len() != t {
        return Err(Error::invalid("orbit record length disagrees with its period"));
    }
    for i in 0..t {
        let image = f.eval(orbit.points[i]);
        let target = orbit.points[(i + 1) % t];
        if cabs(image - target) > real::<T>(ORBIT_CHECK) * (T::one() + cabs(target)) {
            return Err(Error::invalid(format!(
                "point {i} of the orbit does not map to its successor under this map"
            )));
        }
    }
    let rho = orbit.points.iter().fold(Complex::<T>::one(), |m, &z| m * f.deriv(z));
    if cabs(rho - orbit.multiplier) > real::<T>(1e-6) * (T::one() + cabs(rho)) {
        return Err(Error::invalid("recorded multiplier disagrees with the cycle"));
    }
    if cabs(rho - Complex::one()) <= real(PARABOLIC_BAND) {
        return Err(Error::SingularSystem {
            what: "cycle response",
            detail: format!("multiplier {rho} is too close to 1"),
        });
    }
    if cabs(rho) <= real(PARABOLIC_BAND) {
        let crit_tol = real::<T>(1e-8) * profile.scale();
        let mut on_cycle = Vec::new();
        for &b in &orbit.points {
            if cabs(f.deriv(b)) <= crit_tol {
                on_cycle.push(b);
            }
        }
        let simple = on_cycle.len() == 1
            && profile
                .points
                .iter()
                .zip(&profile.multiplicities)
                .any(|(&c, &m)| cabs(c - on_cycle[0]) <= crit_tol && m == 1);
        if !simple {
            return Err(Error::invalid(
                "zero multiplier needs exactly one simple critical point on the cycle",
            ));
        }
    }
    Ok(())
}

/// d(multiplier)/d(chart slot) by implicit differentiation, using the map's
/// own profile order for the value slots.
pub fn multiplier_partials<T: Scalar>(
    f: &Map<T>,
    orbit: &PeriodicOrbitRecord<T>,
    which: RatDirection,
) -> Result<Complex<T>> {
    let profile = f.critical_profile()?;
    multiplier_partials_in(f, &profile, orbit, which)
}

/// Same against a caller-supplied profile order (normalized spaces pin and
/// reorder the slots).
///
/// Differentiating the cycle equations f(b_i) = b_{i+1} along the direction
/// gives the linear response system for the orbit displacement; its matrix
/// is singular exactly at multiplier 1. The multiplier derivative then sums
/// the per-point products f''(b_i) db_i + u'(b_i) against the off-diagonal
/// derivative products.
pub fn multiplier_partials_in<T: Scalar>(
    f: &Map<T>,
    profile: &CriticalProfile<T>,
    orbit: &PeriodicOrbitRecord<T>,
    which: RatDirection,
) -> Result<Complex<T>> {
    validate_orbit(f, profile, orbit)?;
    let field = direction_field(f, profile, which)?;
    let t = orbit.period;
    let derivs: Vec<Complex<T>> = orbit.points.iter().map(|&z| f.deriv(z)).collect();
    let jets: Vec<(Complex<T>, Complex<T>)> =
        orbit.points.iter().map(|&z| field.eval(f, z)).collect();

    let mut a = DMatrix::<Complex<T>>::zeros(t, t);
    let mut rhs = DVector::<Complex<T>>::zeros(t);
    for i in 0..t {
        a[(i, i)] += derivs[i];
        a[(i, (i + 1) % t)] -= Complex::one();
        rhs[i] = -jets[i].0;
    }
    let disp = a.lu().solve(&rhs).ok_or(Error::SingularSystem {
        what: "cycle response",
        detail: "the linearized cycle equations are singular".into(),
    })?;

    // prefix[i] * suffix[i+1] = product of f' over the cycle skipping i.
    let mut prefix = vec![Complex::<T>::one(); t + 1];
    let mut suffix = vec![Complex::<T>::one(); t + 1];
    for i in 0..t {
        prefix[i + 1] = prefix[i] * derivs[i];
        suffix[t - 1 - i] = suffix[t - i] * derivs[t - 1 - i];
    }
    let mut out = Complex::<T>::zero();
    for i in 0..t {
        let gain = second_derivative(f, orbit.points[i]) * disp[i] + jets[i].1;
        out += gain * prefix[i] * suffix[i + 1];
    }
    Ok(out)
}

/// Central-difference cross-check of [`multiplier_partials`]: perturb the map
/// by +-step along the chart direction, re-converge the cycle by Newton, and
/// difference the multipliers. The multiplier is holomorphic in the slot, so
/// a real step recovers the complex derivative.
pub fn fd_multiplier_partial<T: Scalar>(
    f: &Map<T>,
    orbit: &PeriodicOrbitRecord<T>,
    which: RatDirection,
    step: T,
) -> Result<Complex<T>> {
    let profile = f.critical_profile()?;
    fd_multiplier_partial_in(f, &profile, orbit, which, step)
}

/// Profile-explicit variant of the finite-difference cross-check.
pub fn fd_multiplier_partial_in<T: Scalar>(
    f: &Map<T>,
    profile: &CriticalProfile<T>,
    orbit: &PeriodicOrbitRecord<T>,
    which: RatDirection,
    step: T,
) -> Result<Complex<T>> {
    if step <= T::zero() {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    validate_orbit(f, profile, orbit)?;
    let field = direction_field(f, profile, which)?;
    let t = orbit.period;

    let multiplier_at = |s: T| -> Result<Complex<T>> {
        let eval = |z: Complex<T>| f.eval(z) + field.eval(f, z).0 * s;
        let deriv = |z: Complex<T>| f.deriv(z) + field.eval(f, z).1 * s;
        let residual = |x: &DVector<Complex<T>>| {
            DVector::from_fn(t, |i, _| eval(x[i]) - x[(i + 1) % t])
        };
        let jacobian = |x: &DVector<Complex<T>>| {
            let mut j = DMatrix::<Complex<T>>::zeros(t, t);
            for i in 0..t {
                j[(i, i)] += deriv(x[i]);
                j[(i, (i + 1) % t)] -= Complex::one();
            }
            j
        };
        let x0 = DVector::from_iterator(t, orbit.points.iter().copied());
        let sol = newton_solve(residual, jacobian, x0, NewtonOptions::default())?;
        Ok(sol.x.iter().fold(Complex::<T>::one(), |m, &z| m * deriv(z)))
    };

    let plus = multiplier_at(step)?;
    let minus = multiplier_at(-step)?;
    Ok((plus - minus) / Complex::new(step + step, T::zero()))
}

/// Base matrix plus one multiplier-derivative row per periodic orbit, over
/// the same case columns. The orbits must be cycles of `f` itself.
/// Multiplier rows are linear solves, not series, so their tail bounds are
/// zero.
pub fn extended_matrix<T: Scalar + Send + Sync>(
    f: &Map<T>,
    s: &[usize],
    orbits: &[PeriodicOrbitRecord<T>],
    case: MatrixCase,
) -> Result<TransversalityMatrix<T>> {
    let space = assembly_space(f, case)?;
    extended_in(&space, s, orbits, real(1e-12), DEFAULT_MAX_TERMS)
}

/// Core of [`extended_matrix`] against a fixed space.
pub fn extended_in<T: Scalar + Send + Sync>(
    space: &AssemblySpace<T>,
    s: &[usize],
    orbits: &[PeriodicOrbitRecord<T>],
    tol: T,
    max_terms: usize,
) -> Result<TransversalityMatrix<T>> {
    let base = assemble_in(space, s, tol, max_terms)?;
    if orbits.is_empty() {
        return Ok(base);
    }
    let cols = base.columns.len();
    let top = base.rows.len();
    let mut entries = DMatrix::<Complex<T>>::zeros(top + orbits.len(), cols);
    let mut tails = DMatrix::<T>::zeros(top + orbits.len(), cols);
    entries.view_mut((0, 0), (top, cols)).copy_from(&base.entries);
    tails.view_mut((0, 0), (top, cols)).copy_from(&base.tail_bounds);
    let mut rows = base.rows.clone();
    for (i, orbit) in orbits.iter().enumerate() {
        for (c, &w) in base.columns.iter().enumerate() {
            entries[(top + i, c)] =
                multiplier_partials_in(&space.map, &space.profile, orbit, w)?;
        }
        rows.push(RowLabel::Orbit(i));
    }
    let spectrum = singular_values(&entries, real(RANK_REL_TOL));
    let accounting = ReductionAccounting {
        guaranteed_rank: (base.accounting.summable - base.accounting.finite_rows) + spectrum.rank,
        ..base.accounting
    };
    Ok(TransversalityMatrix {
        case: base.case,
        rows,
        columns: base.columns,
        entries,
        tail_bounds: tails,
        spectrum,
        accounting,
    })
}
