//! Rational maps of the form f(z) = sigma z + b + P(z)/Q(z) and their local
//! parameter space.
//!
//! Every degree-d rational map fixing infinity with a non-degenerate linear
//! part can be written this way with Q monic of degree d-1 and deg P <= d-2.
//! Critical points are the roots of W = Phat' Q - Phat Q' (Phat = numerator
//! of f); a root of W that is also a multiple pole of Q has critical value
//! infinity. The local coordinates near a base map are (sigma, b, v_1..v_p,
//! 1/v_{p+1}..1/v_{p'}), finite critical values first.
//!
//! Fixed points drive the normal form: a fixed point with multiplier outside
//! {0, 1} can be moved to infinity and the map rescaled (case H); otherwise
//! a parabolic fixed point sits at infinity and the map is normalized by its
//! translation part (case NN when b != 0, case ND when b = 0).

use nalgebra::DVector;
use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::Error;
use crate::newton::{newton_solve_fd, NewtonOptions};
use crate::poly::ComplexPoly;
use crate::polymap::{confluent_vandermonde, poly_from_solution, CriticalProfile, MAX_DEGREE};
use crate::roots::find_roots;
use crate::scalar::{cabs, lex_cmp, real, to_f64, Scalar, SpherePoint};
use crate::Result;

/// Multipliers (and the translation part b) closer to their critical value
/// than this are treated as exact.
const HARD_BAND: f64 = 1e-12;
/// Outside this band a multiplier is confidently away from 1; inside
/// (HARD_BAND, SOFT_BAND) classification refuses to guess.
const SOFT_BAND: f64 = 1e-8;
/// Normalized maps must satisfy their case conditions to this tolerance.
const NORMAL_TOL: f64 = 1e-10;
/// Looser bound used when the caller asserts a case: normalizing a
/// borderline map amplifies roundoff by the reciprocal of the band width.
const ASSUMED_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Mobius transformations

/// z -> (az + b)/(cz + d) with ad - bc != 0.
#[derive(Debug, Clone, Copy)]
pub struct MobiusTransform<T: Scalar> {
    pub a: Complex<T>,
    pub b: Complex<T>,
    pub c: Complex<T>,
    pub d: Complex<T>,
}

impl<T: Scalar> MobiusTransform<T> {
    pub fn new(a: Complex<T>, b: Complex<T>, c: Complex<T>, d: Complex<T>) -> Result<Self> {
        let det = a * d - b * c;
        if det.is_zero() {
            return Err(Error::invalid("Mobius transform must have ad - bc != 0"));
        }
        Ok(MobiusTransform { a, b, c, d })
    }

    pub fn identity() -> Self {
        MobiusTransform {
            a: Complex::one(),
            b: Complex::zero(),
            c: Complex::zero(),
            d: Complex::one(),
        }
    }

    /// z -> az + b.
    pub fn affine(a: Complex<T>, b: Complex<T>) -> Result<Self> {
        MobiusTransform::new(a, b, Complex::zero(), Complex::one())
    }

    /// z -> a + 1/z, which sends infinity to `a`.
    pub fn inversion_at(a: Complex<T>) -> Self {
        MobiusTransform { a, b: Complex::one(), c: Complex::one(), d: Complex::zero() }
    }

    pub fn det(&self) -> Complex<T> {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, z: SpherePoint<T>) -> SpherePoint<T> {
        match z {
            SpherePoint::Infinity => {
                if self.c.is_zero() {
                    SpherePoint::Infinity
                } else {
                    SpherePoint::Finite(self.a / self.c)
                }
            }
            SpherePoint::Finite(z) => {
                let den = self.c * z + self.d;
                if den.is_zero() {
                    SpherePoint::Infinity
                } else {
                    SpherePoint::Finite((self.a * z + self.b) / den)
                }
            }
        }
    }

    /// The inverse transform (unnormalized; Mobius maps are projective).
    pub fn inverse(&self) -> Self {
        MobiusTransform { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    /// self after other: (self . other)(z) = self(other(z)).
    pub fn compose(&self, other: &Self) -> Self {
        MobiusTransform {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
        }
    }

    /// M'(z) at a finite point.
    pub fn derivative(&self, z: Complex<T>) -> Complex<T> {
        let den = self.c * z + self.d;
        self.det() / (den * den)
    }

    /// (M^{-1})'(w) at a finite point.
    pub fn inverse_derivative(&self, w: Complex<T>) -> Complex<T> {
        let den = self.a - self.c * w;
        self.det() / (den * den)
    }
}

// ---------------------------------------------------------------------------
// The map family

#[derive(Debug, Clone)]
pub struct RationalMap<T: Scalar> {
    sigma: Complex<T>,
    b: Complex<T>,
    /// Numerator of the fractional part, degree <= d-2.
    p: ComplexPoly<T>,
    /// Monic denominator, degree d-1.
    q: ComplexPoly<T>,
    degree: usize,
    /// (sigma z + b) Q + P, the full numerator of f.
    p_hat: ComplexPoly<T>,
    /// Phat' Q - Phat Q'; f' = W/Q^2 and the critical points are its roots.
    w: ComplexPoly<T>,
    /// Roots of Q with multiplicities.
    poles: Vec<(Complex<T>, usize)>,
}

impl<T: Scalar> RationalMap<T> {
    pub fn new(
        sigma: Complex<T>,
        b: Complex<T>,
        p: ComplexPoly<T>,
        q: ComplexPoly<T>,
    ) -> Result<Self> {
        if sigma.is_zero() {
            return Err(Error::invalid("sigma must be nonzero"));
        }
        if q.is_zero() || q.degree() == 0 {
            return Err(Error::invalid("Q must have degree at least 1"));
        }
        if p.is_zero() {
            return Err(Error::invalid("P must be nonzero (otherwise the map is affine)"));
        }
        // Normalize Q monic; P/Q is unchanged by the common rescale.
        let lead = q.leading();
        let q = q.scale(Complex::<T>::one() / lead);
        let p = p.scale(Complex::<T>::one() / lead);
        let degree = q.degree() + 1;
        if degree > MAX_DEGREE {
            return Err(Error::invalid(format!(
                "degree {degree} exceeds the supported range d <= {MAX_DEGREE}"
            )));
        }
        if p.degree() > degree - 2 {
            return Err(Error::invalid(format!(
                "deg P = {} exceeds d-2 = {}",
                p.degree(),
                degree - 2
            )));
        }
        // Coprimality via the resultant, normalized against coefficient size.
        let res = cabs(p.resultant(&q));
        let pn = p.coeffs().iter().map(|c| cabs(*c)).fold(T::zero(), T::max);
        let qn = q.coeffs().iter().map(|c| cabs(*c)).fold(T::zero(), T::max);
        let scale = pn.powi(q.degree() as i32) * qn.max(T::one()).powi(p.degree() as i32);
        if res <= scale * real(1e-12) {
            return Err(Error::invalid("P and Q share a root; the fraction is not reduced"));
        }

        let linear = ComplexPoly::new(vec![sigma, b]);
        let p_hat = linear.mul(&q).add(&p);
        let w = p_hat.derivative().mul(&q).sub(&p_hat.mul(&q.derivative()));
        let poles = find_roots(&q, real(1e-12))?
            .clusters
            .iter()
            .map(|c| (c.center, c.multiplicity))
            .collect();
        Ok(RationalMap { sigma, b, p, q, degree, p_hat, w, poles })
    }

    pub fn sigma(&self) -> Complex<T> {
        self.sigma
    }

    pub fn b(&self) -> Complex<T> {
        self.b
    }

    pub fn p_poly(&self) -> &ComplexPoly<T> {
        &self.p
    }

    pub fn q_poly(&self) -> &ComplexPoly<T> {
        &self.q
    }

    pub fn p_hat(&self) -> &ComplexPoly<T> {
        &self.p_hat
    }

    pub fn w_poly(&self) -> &ComplexPoly<T> {
        &self.w
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn poles(&self) -> &[(Complex<T>, usize)] {
        &self.poles
    }

    /// Distance from z to the nearest pole of the map.
    pub fn pole_distance(&self, z: Complex<T>) -> T {
        self.poles
            .iter()
            .map(|&(p, _)| cabs(z - p))
            .fold(T::max_value().unwrap_or_else(T::one), T::min)
    }

    /// Value at a finite point; infinite exactly when Q(z) = 0.
    pub fn eval(&self, z: Complex<T>) -> Complex<T> {
        self.p_hat.eval(z) / self.q.eval(z)
    }

    pub fn eval_sphere(&self, z: SpherePoint<T>) -> SpherePoint<T> {
        match z {
            // Infinity is fixed: f(z) = sigma z + O(1) with sigma != 0.
            SpherePoint::Infinity => SpherePoint::Infinity,
            SpherePoint::Finite(z) => {
                let qz = self.q.eval(z);
                if qz.is_zero() {
                    SpherePoint::Infinity
                } else {
                    SpherePoint::Finite(self.p_hat.eval(z) / qz)
                }
            }
        }
    }

    /// f'(z) = W(z)/Q(z)^2 at a finite non-pole.
    pub fn deriv(&self, z: Complex<T>) -> Complex<T> {
        let qz = self.q.eval(z);
        self.w.eval(z) / (qz * qz)
    }

    /// Multiplier of a fixed point; at infinity it is 1/sigma.
    pub fn multiplier(&self, fixed: SpherePoint<T>) -> Complex<T> {
        match fixed {
            SpherePoint::Infinity => Complex::<T>::one() / self.sigma,
            SpherePoint::Finite(a) => self.deriv(a),
        }
    }
}

// ---------------------------------------------------------------------------
// Critical profile

/// Critical points as roots of W, with pole-criticals (multiple roots of Q)
/// carrying value infinity. Finite-valued points come first, each block
/// sorted lexicographically; multiplicities sum to 2d-2.
pub fn rational_critical_profile<T: Scalar>(f: &RationalMap<T>) -> Result<CriticalProfile<T>> {
    let roots = find_roots(&f.w, real(1e-12))?;
    let scale: T = roots
        .clusters
        .iter()
        .map(|c| cabs(c.center))
        .fold(T::one(), T::max);
    let mut finite: Vec<(Complex<T>, usize, SpherePoint<T>)> = Vec::new();
    let mut infinite: Vec<(Complex<T>, usize, SpherePoint<T>)> = Vec::new();
    for cl in &roots.clusters {
        let near_pole = f
            .poles
            .iter()
            .any(|&(p, m)| m >= 2 && cabs(cl.center - p) < scale * real(1e-6));
        if near_pole {
            infinite.push((cl.center, cl.multiplicity, SpherePoint::Infinity));
        } else {
            let v = f.eval(cl.center);
            finite.push((cl.center, cl.multiplicity, SpherePoint::Finite(v)));
        }
    }
    finite.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    infinite.sort_by(|a, b| lex_cmp(&a.0, &b.0));
    finite.extend(infinite);

    let points: Vec<_> = finite.iter().map(|e| e.0).collect();
    let multiplicities: Vec<_> = finite.iter().map(|e| e.1).collect();
    let values: Vec<_> = finite.iter().map(|e| e.2).collect();
    debug_assert_eq!(multiplicities.iter().sum::<usize>(), 2 * f.degree() - 2);
    Ok(CriticalProfile { points, multiplicities, values })
}

// ---------------------------------------------------------------------------
// Partial derivatives of the chart

/// A coordinate direction of the local space: the multiplier-like slots
/// sigma and b, or the k-th finite critical value (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatDirection {
    Sigma,
    B,
    V(usize),
}

impl std::fmt::Display for RatDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RatDirection::Sigma => write!(f, "sigma"),
            RatDirection::B => write!(f, "b"),
            RatDirection::V(k) => write!(f, "v{k}"),
        }
    }
}

/// The tangent map df/d(direction). For value slots it is the rational
/// function q_k = Ptilde/Q^2; for sigma and b the closed forms (z/sigma) f'
/// and f'/sigma.
#[derive(Debug, Clone)]
pub struct RationalPartial<T: Scalar> {
    pub direction: RatDirection,
    /// Numerator of q_k for value directions, degree <= 2d-3.
    pub p_tilde: Option<ComplexPoly<T>>,
}

impl<T: Scalar> RationalPartial<T> {
    pub fn eval(&self, f: &RationalMap<T>, z: Complex<T>) -> Complex<T> {
        match (self.direction, &self.p_tilde) {
            (RatDirection::Sigma, _) => z / f.sigma * f.deriv(z),
            (RatDirection::B, _) => f.deriv(z) / f.sigma,
            (RatDirection::V(_), Some(pt)) => {
                let qz = f.q.eval(z);
                pt.eval(z) / (qz * qz)
            }
            _ => unreachable!("value direction without a numerator"),
        }
    }

    /// The ratio (df/d.)/f' used by the orbit series. For value slots this is
    /// Ptilde/W, finite even at poles of f; for sigma and b it is z/sigma and
    /// 1/sigma, with no singular factor at all.
    pub fn over_fprime(&self, f: &RationalMap<T>, z: Complex<T>) -> Complex<T> {
        match (self.direction, &self.p_tilde) {
            (RatDirection::Sigma, _) => z / f.sigma,
            (RatDirection::B, _) => Complex::<T>::one() / f.sigma,
            (RatDirection::V(_), Some(pt)) => pt.eval(z) / f.w.eval(z),
            _ => unreachable!("value direction without a numerator"),
        }
    }
}

/// Builds df/d(direction). For which = V(k) the numerator Ptilde solves the
/// Hermite conditions: Ptilde - delta_{jk} Q^2 vanishes to order m_j at every
/// finite-valued critical point c_j, and Ptilde vanishes to order m_j at the
/// pole-critical points. k must index a finite critical value.
pub fn rational_partial_derivative<T: Scalar>(
    f: &RationalMap<T>,
    which: RatDirection,
) -> Result<RationalPartial<T>> {
    let profile = rational_critical_profile(f)?;
    rational_partial_from_profile(f, &profile, which)
}

pub fn rational_partial_from_profile<T: Scalar>(
    f: &RationalMap<T>,
    profile: &CriticalProfile<T>,
    which: RatDirection,
) -> Result<RationalPartial<T>> {
    let k = match which {
        RatDirection::Sigma | RatDirection::B => {
            return Ok(RationalPartial { direction: which, p_tilde: None });
        }
        RatDirection::V(k) => k,
    };
    let p = profile.finite_count();
    if k == 0 || k > p {
        return Err(Error::invalid(format!(
            "direction v{k} does not index a finite critical value (p = {p})"
        )));
    }
    let dim = 2 * f.degree() - 2;
    let mat = confluent_vandermonde(&profile.points, &profile.multiplicities, dim);
    let mut rhs = DVector::from_element(dim, Complex::<T>::zero());
    let q_sq = f.q.mul(&f.q);
    let mut row = 0;
    for (j, &c) in profile.points.iter().enumerate() {
        let m = profile.multiplicities[j];
        if j + 1 == k {
            // Taylor coefficients t_l = (Q^2)^{(l)}(c)/l!; the row carries
            // the derivative itself.
            let tay = q_sq.taylor_at(c, m);
            let mut fact = T::one();
            for (l, t) in tay.iter().enumerate() {
                rhs[row + l] = t.scale(fact);
                fact *= real((l + 1) as f64);
            }
        }
        row += m;
    }
    let sol = mat.col_piv_qr().solve(&rhs).ok_or_else(|| Error::SingularSystem {
        what: "Hermite conditions for a rational partial derivative",
        detail: "confluent Vandermonde solve failed; critical points may coincide".into(),
    })?;
    Ok(RationalPartial { direction: which, p_tilde: Some(poly_from_solution(&sol)) })
}

// ---------------------------------------------------------------------------
// Fixed points and classification

#[derive(Debug, Clone)]
pub struct FixedPointInfo<T: Scalar> {
    pub point: SpherePoint<T>,
    pub multiplier: Complex<T>,
}

/// All fixed points: roots of Phat - zQ, plus infinity with multiplier
/// 1/sigma. Fixed points are never poles (coprimality).
pub fn fixed_points<T: Scalar>(f: &RationalMap<T>) -> Result<Vec<FixedPointInfo<T>>> {
    let fix = f.p_hat.sub(&ComplexPoly::new(vec![Complex::one(), Complex::zero()]).mul(&f.q));
    let mut out = Vec::new();
    if !fix.is_zero() && fix.degree() >= 1 {
        for cl in find_roots(&fix, real(1e-12))?.clusters {
            out.push(FixedPointInfo {
                point: SpherePoint::Finite(cl.center),
                multiplier: f.deriv(cl.center),
            });
        }
    }
    out.push(FixedPointInfo {
        point: SpherePoint::Infinity,
        multiplier: Complex::<T>::one() / f.sigma,
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceCase {
    /// Some fixed point has multiplier outside {0, 1}.
    H,
    /// Parabolic at infinity with nonzero translation part.
    NN,
    /// Degenerate parabolic at infinity.
    ND,
}

impl std::fmt::Display for SpaceCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpaceCase::H => write!(f, "H"),
            SpaceCase::NN => write!(f, "NN"),
            SpaceCase::ND => write!(f, "ND"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassifyOptions {
    /// Skip the ambiguity bands and force a case; normalization conditions
    /// are then only enforced to the soft band.
    pub assume_case: Option<SpaceCase>,
    /// 1-based finite-value slots (in the base profile order) designating
    /// which critical value is sent to 1 resp. 0 in case ND. Defaults to the
    /// last two finite slots.
    pub petal_one: Option<usize>,
    pub petal_zero: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SpaceClassification<T: Scalar> {
    pub case: SpaceCase,
    /// normalized = M^{-1} . f . M.
    pub normalizer: MobiusTransform<T>,
    pub normalized: RationalMap<T>,
    /// Profile of the normalized map, reordered so the pinned values sit at
    /// the end of the finite block: v_p = 1 (H, NN) or v_{p-1} = 1, v_p = 0
    /// (ND). Everything downstream indexes this order.
    pub profile: CriticalProfile<T>,
    /// Fixed points of the original map.
    pub fixed_points: Vec<FixedPointInfo<T>>,
    /// The fixed point sent to infinity, in original coordinates.
    pub anchor: SpherePoint<T>,
}

pub fn classify<T: Scalar>(f: &RationalMap<T>) -> Result<SpaceClassification<T>> {
    classify_with(f, &ClassifyOptions::default())
}

pub fn classify_with<T: Scalar>(
    f: &RationalMap<T>,
    opts: &ClassifyOptions,
) -> Result<SpaceClassification<T>> {
    let fixed = fixed_points(f)?;
    let soft = real::<T>(SOFT_BAND);
    let hard = real::<T>(HARD_BAND);

    let eligible_h = |fp: &FixedPointInfo<T>| {
        let rho = fp.multiplier;
        cabs(rho) > soft && cabs(rho - Complex::one()) > soft
    };

    let case = if let Some(assumed) = opts.assume_case {
        assumed
    } else if fixed.iter().any(eligible_h) {
        SpaceCase::H
    } else {
        // No hyperbolic-type anchor. Refuse to guess if any multiplier sits
        // in the unresolvable band around 1.
        let mut nearest = f64::INFINITY;
        for fp in &fixed {
            let dist = cabs(fp.multiplier - Complex::one());
            if dist > hard && dist <= soft {
                nearest = nearest.min(to_f64(dist));
            }
        }
        if nearest.is_finite() {
            return Err(Error::AmbiguousClassification { distance: nearest, band: SOFT_BAND });
        }
        // All multipliers are 0 or 1 to hard tolerance. In this family that
        // forces sigma = 1, so infinity is the parabolic point; b decides
        // degeneracy.
        let babs = cabs(f.b);
        if babs > soft {
            SpaceCase::NN
        } else if babs <= hard {
            SpaceCase::ND
        } else {
            return Err(Error::AmbiguousClassification {
                distance: to_f64(babs),
                band: SOFT_BAND,
            });
        }
    };

    let check_tol = if opts.assume_case.is_some() { ASSUMED_TOL } else { NORMAL_TOL };
    let (normalizer, anchor) = match case {
        SpaceCase::H => build_h_normalizer(f, &fixed)?,
        SpaceCase::NN => (build_nn_normalizer(f)?, SpherePoint::Infinity),
        SpaceCase::ND => (build_nd_normalizer(f, opts)?, SpherePoint::Infinity),
    };
    let normalized = conjugate_to_family(f, &normalizer)?;
    let profile = reorder_pinned(rational_critical_profile(&normalized)?, case, check_tol)?;

    // Normal-form conditions on the map coefficients themselves.
    let ok = match case {
        SpaceCase::H => cabs(normalized.b) <= real(check_tol),
        SpaceCase::NN => {
            cabs(normalized.sigma - Complex::one()) <= real(check_tol)
                && cabs(normalized.b - Complex::one()) <= real(check_tol)
        }
        SpaceCase::ND => {
            cabs(normalized.sigma - Complex::one()) <= real(check_tol)
                && cabs(normalized.b) <= real(check_tol)
        }
    };
    if !ok {
        return Err(Error::invalid(format!(
            "normalization for case {case} failed: sigma = {}, b = {}",
            normalized.sigma, normalized.b
        )));
    }

    Ok(SpaceClassification { case, normalizer, normalized, profile, fixed_points: fixed, anchor })
}

/// Case H: anchor at infinity when sigma is clearly away from 1 (the
/// normalizer stays affine); otherwise the finite fixed point of largest
/// multiplier magnitude, ties broken lexicographically.
fn build_h_normalizer<T: Scalar>(
    f: &RationalMap<T>,
    fixed: &[FixedPointInfo<T>],
) -> Result<(MobiusTransform<T>, SpherePoint<T>)> {
    let soft = real::<T>(SOFT_BAND);
    let inf_ok = cabs(f.sigma - Complex::one()) > soft;
    let anchor = if inf_ok {
        SpherePoint::Infinity
    } else {
        let mut best: Option<&FixedPointInfo<T>> = None;
        for fp in fixed {
            if let SpherePoint::Finite(a) = fp.point {
                let rho = fp.multiplier;
                if cabs(rho) <= soft || cabs(rho - Complex::one()) <= soft {
                    continue;
                }
                best = match best {
                    None => Some(fp),
                    Some(cur) => {
                        let (ca, cb) = (cabs(rho), cabs(cur.multiplier));
                        if ca > cb
                            || (ca == cb
                                && lex_cmp(&a, &cur.point.finite().unwrap())
                                    == std::cmp::Ordering::Greater)
                        {
                            Some(fp)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
        }
        match best {
            Some(fp) => fp.point,
            None => {
                return Err(Error::invalid(
                    "case H requested but no fixed point has multiplier outside {0, 1}",
                ));
            }
        }
    };

    // Move the anchor to infinity if needed, then kill b by translation and
    // pin the last critical value to 1 by scaling.
    let (m0, g0) = match anchor {
        SpherePoint::Infinity => (MobiusTransform::identity(), f.clone()),
        SpherePoint::Finite(a) => {
            let m0 = MobiusTransform::inversion_at(a);
            let g0 = conjugate_to_family(f, &m0)?;
            (m0, g0)
        }
    };
    let t = g0.b / (Complex::<T>::one() - g0.sigma);
    let prof0 = rational_critical_profile(&g0)?;
    let lambda = pick_anchor_value(&prof0, |v| v - t)?;
    let affine = MobiusTransform::affine(lambda, t)?;
    Ok((m0.compose(&affine), anchor))
}

/// Case NN: scale so b = 1, then translate to pin the last critical value.
fn build_nn_normalizer<T: Scalar>(f: &RationalMap<T>) -> Result<MobiusTransform<T>> {
    let lambda = f.b;
    let prof = rational_critical_profile(f)?;
    // M(z) = lambda z + lambda t; values map to v/lambda - t.
    let v_a = pick_anchor_value(&prof, |v| v / lambda)?;
    let t = v_a - Complex::one();
    MobiusTransform::affine(lambda, lambda * t)
}

/// Case ND: translate the petal-zero value to 0, scale the petal-one value
/// to 1.
fn build_nd_normalizer<T: Scalar>(
    f: &RationalMap<T>,
    opts: &ClassifyOptions,
) -> Result<MobiusTransform<T>> {
    let prof = rational_critical_profile(f)?;
    let p = prof.finite_count();
    if p < 2 {
        return Err(Error::invalid(
            "case ND needs two finite critical values to designate the petals",
        ));
    }
    let one_slot = opts.petal_one.unwrap_or(p - 1);
    let zero_slot = opts.petal_zero.unwrap_or(p);
    if one_slot == zero_slot || one_slot == 0 || zero_slot == 0 || one_slot > p || zero_slot > p {
        return Err(Error::invalid(format!(
            "petal designation ({one_slot}, {zero_slot}) must be two distinct finite slots"
        )));
    }
    let vals = prof.finite_values();
    let t = vals[zero_slot - 1];
    let lambda = vals[one_slot - 1] - t;
    if cabs(lambda) <= prof.scale() * real(1e-10) {
        return Err(Error::invalid("designated petal values coincide"));
    }
    MobiusTransform::affine(lambda, t)
}

/// Deterministic choice of the critical value pinned to 1: largest transformed
/// magnitude, ties broken by the lexicographically larger critical point.
fn pick_anchor_value<T: Scalar>(
    profile: &CriticalProfile<T>,
    transform: impl Fn(Complex<T>) -> Complex<T>,
) -> Result<Complex<T>> {
    let floor = profile.scale() * real(1e-10);
    let mut best: Option<(Complex<T>, Complex<T>)> = None;
    for (j, v) in profile.values.iter().enumerate() {
        let SpherePoint::Finite(v) = *v else { continue };
        let tv = transform(v);
        if cabs(tv) <= floor {
            continue;
        }
        best = match best {
            None => Some((tv, profile.points[j])),
            Some((cur, cur_pt)) => {
                if cabs(tv) > cabs(cur)
                    || (cabs(tv) == cabs(cur)
                        && lex_cmp(&profile.points[j], &cur_pt) == std::cmp::Ordering::Greater)
                {
                    Some((tv, profile.points[j]))
                } else {
                    Some((cur, cur_pt))
                }
            }
        };
    }
    best.map(|(tv, _)| tv)
        .ok_or_else(|| Error::invalid("no finite nonzero critical value to pin during normalization"))
}

/// Moves the pinned slots of a freshly computed (lex-ordered) profile to the
/// end of the finite block: nearest-to-1 last for H/NN, nearest-to-1 then
/// nearest-to-0 for ND.
fn reorder_pinned<T: Scalar>(
    profile: CriticalProfile<T>,
    case: SpaceCase,
    tol: f64,
) -> Result<CriticalProfile<T>> {
    let p = profile.finite_count();
    let vals = &profile.values;
    let nearest = |target: Complex<T>, skip: Option<usize>| -> Result<usize> {
        let mut best = None;
        for (j, slot) in vals.iter().enumerate().take(p) {
            if Some(j) == skip {
                continue;
            }
            let v = slot.finite().unwrap();
            let d = cabs(v - target);
            best = match best {
                None => Some((j, d)),
                Some((bj, bd)) => {
                    if d < bd {
                        Some((j, d))
                    } else {
                        Some((bj, bd))
                    }
                }
            };
        }
        let (j, d) = best.ok_or_else(|| Error::invalid("normalized profile has no finite value"))?;
        if d > real(tol) {
            return Err(Error::invalid(format!(
                "no normalized critical value within {tol:e} of the pinned target"
            )));
        }
        Ok(j)
    };

    let order: Vec<usize> = match case {
        SpaceCase::H | SpaceCase::NN => {
            let j1 = nearest(Complex::one(), None)?;
            let mut order: Vec<usize> = (0..profile.len()).filter(|&j| j != j1).collect();
            order.insert(p - 1, j1);
            order
        }
        SpaceCase::ND => {
            let j0 = nearest(Complex::zero(), None)?;
            let j1 = nearest(Complex::one(), Some(j0))?;
            let mut order: Vec<usize> =
                (0..profile.len()).filter(|&j| j != j0 && j != j1).collect();
            order.insert(p - 2, j1);
            order.insert(p - 1, j0);
            order
        }
    };
    Ok(CriticalProfile {
        points: order.iter().map(|&j| profile.points[j]).collect(),
        multiplicities: order.iter().map(|&j| profile.multiplicities[j]).collect(),
        values: order.iter().map(|&j| profile.values[j]).collect(),
    })
}

// ---------------------------------------------------------------------------
// Mobius conjugation

/// Drops leading coefficients that are roundoff residue of an exact
/// cancellation, refusing to go below the expected degree or to drop
/// anything that is not negligible against the coefficient scale.
fn strip_top_to_degree<T: Scalar>(
    poly: ComplexPoly<T>,
    expected: usize,
) -> Result<ComplexPoly<T>> {
    let scale = poly.coeffs().iter().map(|c| cabs(*c)).fold(T::zero(), T::max);
    let mut coeffs = poly.coeffs().to_vec();
    while coeffs.len() > expected + 1 {
        if cabs(coeffs[0]) <= scale * real(1e-10) {
            coeffs.remove(0);
        } else {
            return Err(Error::invalid(
                "conjugated map does not fix infinity; M(inf) must be a fixed point",
            ));
        }
    }
    Ok(ComplexPoly::new(coeffs))
}

/// M^{-1} . f . M expressed back in the sigma z + b + P/Q family. Requires
/// M(infinity) to be a fixed point of f, which is exactly when the conjugated
/// map still fixes infinity.
pub fn conjugate_to_family<T: Scalar>(
    f: &RationalMap<T>,
    m: &MobiusTransform<T>,
) -> Result<RationalMap<T>> {
    let d = f.degree;
    // Homogenize: U = Phat(M) (cz+d)^d, V = Q(M) (cz+d)^{d-1}.
    let az = ComplexPoly::new(vec![m.a, m.b]);
    let cz = ComplexPoly::new(vec![m.c, m.d]);
    let mut az_pow = vec![ComplexPoly::one()];
    let mut cz_pow = vec![ComplexPoly::one()];
    for i in 1..=d {
        az_pow.push(az_pow[i - 1].mul(&az));
        cz_pow.push(cz_pow[i - 1].mul(&cz));
    }
    let mut u = ComplexPoly::zero();
    for k in 0..=d {
        let coeff = f.p_hat.coeff(k);
        if !coeff.is_zero() {
            u = u.add(&az_pow[k].mul(&cz_pow[d - k]).scale(coeff));
        }
    }
    let mut v = ComplexPoly::zero();
    for k in 0..=d - 1 {
        let coeff = f.q.coeff(k);
        if !coeff.is_zero() {
            v = v.add(&az_pow[k].mul(&cz_pow[d - 1 - k]).scale(coeff));
        }
    }
    // f(M(z)) = U / ((cz+d) V); apply M^{-1} = (dw - b)/(-cw + a).
    let den_v = cz.mul(&v);
    let num = u.scale(m.d).sub(&den_v.scale(m.b));
    let den = den_v.scale(m.a).sub(&u.scale(m.c));
    // The z^d coefficient of the denominator cancels exactly when M(inf) is
    // fixed; strip its roundoff residue, but nothing below degree d-1 (small
    // leading coefficients there are genuine, e.g. for tiny affine scales).
    let den = strip_top_to_degree(den, d - 1)?;
    if num.degree() != d || den.degree() != d - 1 {
        return Err(Error::invalid(
            "conjugated map does not fix infinity; M(inf) must be a fixed point",
        ));
    }
    let (linear, rem) = num.div_rem(&den);
    if linear.degree() != 1 {
        return Err(Error::invalid("conjugated map has a degenerate linear part"));
    }
    RationalMap::new(linear.coeff(1), linear.coeff(0), rem, den)
}

/// A map conjugated by an arbitrary Mobius transform, kept in composed form
/// (it generally leaves the sigma z + b + P/Q family). The profile preserves
/// the base ordering so row/column indices keep their meaning.
#[derive(Debug, Clone)]
pub struct ConjugatedMap<T: Scalar> {
    pub base: RationalMap<T>,
    pub mobius: MobiusTransform<T>,
    pub profile: CriticalProfile<T>,
    /// Orbit length actually screened when checking that M(inf) avoids the
    /// critical orbits; avoidance beyond it is assumed.
    pub screened_orbit_len: usize,
}

impl<T: Scalar> ConjugatedMap<T> {
    /// (M^{-1} . f . M)(z), pointwise.
    pub fn eval_sphere(&self, z: SpherePoint<T>) -> SpherePoint<T> {
        let inv = self.mobius.inverse();
        inv.apply(self.base.eval_sphere(self.mobius.apply(z)))
    }

    /// Chain-rule derivative at a finite point whose image is finite.
    pub fn deriv(&self, z: Complex<T>) -> Complex<T> {
        let w = self.mobius.apply(SpherePoint::Finite(z)).finite().expect("pole of M");
        let fw = self.base.eval(w);
        self.mobius.inverse_derivative(fw) * self.base.deriv(w) * self.mobius.derivative(z)
    }
}

/// Points M(infinity) must stay away from: critical points, critical values,
/// and the forward orbits of the finite critical values.
fn mobius_avoid_set<T: Scalar>(
    f: &RationalMap<T>,
    profile: &CriticalProfile<T>,
    budget: usize,
) -> Vec<SpherePoint<T>> {
    let mut pts: Vec<SpherePoint<T>> = Vec::new();
    for &c in &profile.points {
        pts.push(SpherePoint::Finite(c));
    }
    for v in &profile.values {
        pts.push(*v);
        let mut z = *v;
        for _ in 0..budget {
            z = f.eval_sphere(z);
            pts.push(z);
            // Infinity is a fixed point; the orbit has stabilized.
            if z.is_infinite() {
                break;
            }
        }
    }
    pts
}

/// Conjugates f by M after checking that M(infinity) keeps a spherical
/// distance of at least 1e-6 from the budgeted critical orbits.
pub fn mobius_conjugated_space<T: Scalar>(
    f: &RationalMap<T>,
    m: &MobiusTransform<T>,
    orbit_budget: usize,
) -> Result<ConjugatedMap<T>> {
    let profile = rational_critical_profile(f)?;
    let m_inf = m.apply(SpherePoint::Infinity);
    let threshold = real::<T>(1e-6);
    for pt in mobius_avoid_set(f, &profile, orbit_budget) {
        let dist = m_inf.chordal(&pt);
        if dist < threshold {
            return Err(Error::OrbitCollision { distance: to_f64(dist), threshold: 1e-6 });
        }
    }
    let inv = m.inverse();
    let points = profile
        .points
        .iter()
        .map(|&c| {
            inv.apply(SpherePoint::Finite(c))
                .finite()
                .ok_or_else(|| Error::invalid("a critical point maps to infinity under M^{-1}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let values = profile.values.iter().map(|&v| inv.apply(v)).collect();
    Ok(ConjugatedMap {
        base: f.clone(),
        mobius: *m,
        profile: CriticalProfile {
            points,
            multiplicities: profile.multiplicities.clone(),
            values,
        },
        screened_orbit_len: orbit_budget,
    })
}

/// Deterministic probe transform M(z) = alpha z / (alpha - z), with alpha
/// walked along a golden-ratio spiral until M(infinity) = -alpha clears the
/// critical orbits by chordal distance 0.1.
pub fn choose_probe_mobius<T: Scalar>(
    f: &RationalMap<T>,
    orbit_budget: usize,
) -> Result<ConjugatedMap<T>> {
    let profile = rational_critical_profile(f)?;
    let avoid = mobius_avoid_set(f, &profile, orbit_budget);
    let scale = profile.scale();
    let phi = 0.618_033_988_749_894_9_f64;
    for k in 1..=256u32 {
        let theta = 2.0 * std::f64::consts::PI * ((k as f64 * phi) % 1.0);
        let r = 0.9 + 0.6 * ((k as f64 * phi * phi) % 1.0);
        let alpha = Complex::new(
            scale * real(r * theta.cos()),
            scale * real(r * theta.sin()),
        );
        let m = MobiusTransform::new(alpha, Complex::zero(), -Complex::<T>::one(), alpha)?;
        let m_inf = m.apply(SpherePoint::Infinity);
        let clear = avoid.iter().all(|pt| m_inf.chordal(pt) >= real(0.1));
        if clear {
            return mobius_conjugated_space(f, &m, orbit_budget);
        }
    }
    Err(Error::NonConvergence {
        what: "probe Mobius selection",
        iterations: 256,
        residual: f64::NAN,
    })
}

// ---------------------------------------------------------------------------
// The (sigma, b, v) chart

/// Coordinates of a map in its local space: sigma, b, then one slot per
/// distinct critical point in profile order (the value when finite, its
/// reciprocal 0 for values at infinity).
#[derive(Debug, Clone)]
pub struct RatCoordinates<T: Scalar> {
    pub sigma: Complex<T>,
    pub b: Complex<T>,
    pub slots: Vec<Complex<T>>,
    /// Number of leading slots holding plain values (the rest hold
    /// reciprocals).
    pub finite_count: usize,
}

pub fn rational_coordinates<T: Scalar>(f: &RationalMap<T>) -> Result<RatCoordinates<T>> {
    let profile = rational_critical_profile(f)?;
    let p = profile.finite_count();
    let slots = profile
        .values
        .iter()
        .map(|v| match v {
            SpherePoint::Finite(v) => *v,
            SpherePoint::Infinity => Complex::zero(),
        })
        .collect();
    Ok(RatCoordinates { sigma: f.sigma, b: f.b, slots, finite_count: p })
}

/// Inverts the chart near f0: finds the map with the given coordinates and
/// the same W-multiplicity pattern. sigma and b are read off directly; the
/// remaining unknowns (coefficients of P and Q plus the continued critical
/// points) satisfy the W-vanishing and value equations, a square system.
pub fn rational_from_coordinates<T: Scalar>(
    f0: &RationalMap<T>,
    target: &RatCoordinates<T>,
    tol: T,
) -> Result<RationalMap<T>> {
    let profile = rational_critical_profile(f0)?;
    let d = f0.degree;
    let p_prime = profile.len();
    let p = profile.finite_count();
    if target.slots.len() != p_prime {
        return Err(Error::invalid(format!(
            "target has {} slots but the map has {} distinct critical points",
            target.slots.len(),
            p_prime
        )));
    }
    let mults = profile.multiplicities.clone();
    let sigma = target.sigma;
    let b = target.b;

    // State layout: P coefficients (z^{d-2}..z^0), free Q coefficients
    // (z^{d-2}..z^0, leading 1 implied), then the critical points.
    let n_coef = d - 1;
    let dim = 2 * n_coef + p_prime;
    let mut x0 = DVector::from_element(dim, Complex::<T>::zero());
    for k in 0..n_coef {
        x0[k] = f0.p.coeff(n_coef - 1 - k).to_owned();
        x0[n_coef + k] = f0.q.coeff(n_coef - 1 - k).to_owned();
    }
    for (j, &c) in profile.points.iter().enumerate() {
        x0[2 * n_coef + j] = c;
    }

    let unpack = |x: &DVector<Complex<T>>| -> (ComplexPoly<T>, ComplexPoly<T>) {
        let pc: Vec<Complex<T>> = (0..n_coef).map(|k| x[k]).collect();
        let mut qc = Vec::with_capacity(d);
        qc.push(Complex::<T>::one());
        for k in 0..n_coef {
            qc.push(x[n_coef + k]);
        }
        (ComplexPoly::new(pc), ComplexPoly::new(qc))
    };

    let residual = |x: &DVector<Complex<T>>| -> DVector<Complex<T>> {
        let (pp, qq) = unpack(x);
        let linear = ComplexPoly::new(vec![sigma, b]);
        let p_hat = linear.mul(&qq).add(&pp);
        let w = p_hat.derivative().mul(&qq).sub(&p_hat.mul(&qq.derivative()));
        let mut out = DVector::from_element(dim, Complex::<T>::zero());
        let mut row = 0;
        for (j, &m) in mults.iter().enumerate() {
            let c = x[2 * n_coef + j];
            let tay = w.taylor_at(c, m);
            for t in tay.iter().take(m) {
                out[row] = *t;
                row += 1;
            }
        }
        for j in 0..p_prime {
            let c = x[2 * n_coef + j];
            let (num, den) = (p_hat.eval(c), qq.eval(c));
            out[row] = if j < p {
                num / den - target.slots[j]
            } else {
                den / num - target.slots[j]
            };
            row += 1;
        }
        out
    };

    let opts = NewtonOptions { tol, max_iter: 60, ..NewtonOptions::default() };
    let out = newton_solve_fd(residual, x0, opts)?;
    let (pp, qq) = unpack(&out.x);
    let g = RationalMap::new(sigma, b, pp, qq)?;

    let mut got: Vec<usize> = rational_critical_profile(&g)?.multiplicities;
    let mut want = mults.clone();
    got.sort_unstable();
    want.sort_unstable();
    if got != want {
        return Err(Error::MultiplicityBroken {
            detail: format!("W-multiplicity pattern changed from {want:?} to {got:?}"),
        });
    }
    Ok(g)
}

/// Central-difference check of a partial derivative against the chart, on a
/// probe grid that skips the immediate vicinity of poles. Mirrors the
/// polynomial version.
pub fn fd_check_rational_partial<T: Scalar>(
    f: &RationalMap<T>,
    which: RatDirection,
    h: T,
) -> Result<T> {
    let coords = rational_coordinates(f)?;
    let partial = rational_partial_derivative(f, which)?;
    let step = Complex::new(h, T::zero());

    let perturb = |sign: T| -> RatCoordinates<T> {
        let mut c = coords.clone();
        let delta = step.scale(sign);
        match which {
            RatDirection::Sigma => c.sigma += delta,
            RatDirection::B => c.b += delta,
            RatDirection::V(k) => c.slots[k - 1] += delta,
        }
        c
    };
    let gp = rational_from_coordinates(f, &perturb(T::one()), real(1e-13))?;
    let gm = rational_from_coordinates(f, &perturb(-T::one()), real(1e-13))?;

    let profile = rational_critical_profile(f)?;
    let scale = profile.scale();
    let two_h = Complex::new(h + h, T::zero());
    let mut worst = T::zero();
    let mut used = 0;
    for z in crate::polymap::probe_grid(scale, 7) {
        if f.pole_distance(z) < scale * real(0.05) {
            continue;
        }
        let fd = (gp.eval(z) - gm.eval(z)) / two_h;
        let exact = partial.eval(f, z);
        let err = cabs(fd - exact) / (T::one() + cabs(exact));
        worst = worst.max(err);
        used += 1;
    }
    if used < 10 {
        return Err(Error::invalid("probe grid collapsed onto the poles"));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cx;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly64(coeffs: &[(f64, f64)]) -> ComplexPoly<f64> {
        ComplexPoly::new(coeffs.iter().map(|&(re, im)| cx(re, im)).collect())
    }

    /// 2z + 1/z.
    fn rat_h() -> RationalMap<f64> {
        RationalMap::new(cx(2.0, 0.0), cx(0.0, 0.0), poly64(&[(1.0, 0.0)]), poly64(&[(1.0, 0.0), (0.0, 0.0)]))
            .unwrap()
    }

    /// z + 1/z.
    fn rat_nd() -> RationalMap<f64> {
        RationalMap::new(cx(1.0, 0.0), cx(0.0, 0.0), poly64(&[(1.0, 0.0)]), poly64(&[(1.0, 0.0), (0.0, 0.0)]))
            .unwrap()
    }

    /// z + 1 + 1/z.
    fn rat_nn() -> RationalMap<f64> {
        RationalMap::new(cx(1.0, 0.0), cx(1.0, 0.0), poly64(&[(1.0, 0.0)]), poly64(&[(1.0, 0.0), (0.0, 0.0)]))
            .unwrap()
    }

    /// z + 2 + 1/z: fixed point -1/2 with multiplier -3, parabolic infinity.
    fn rat_finite_anchor() -> RationalMap<f64> {
        RationalMap::new(cx(1.0, 0.0), cx(2.0, 0.0), poly64(&[(1.0, 0.0)]), poly64(&[(1.0, 0.0), (0.0, 0.0)]))
            .unwrap()
    }

    /// z + 1/z^2: critical value at infinity (double pole at 0).
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
    fn mobius_roundtrip_and_composition() {
        let m = MobiusTransform::new(cx::<f64>(2.0, 0.0), cx(0.0, 1.0), cx(1.0, 0.0), cx(-1.0, 0.0))
            .unwrap();
        let inv = m.inverse();
        for z in [
            SpherePoint::Finite(cx(0.3, -0.7)),
            SpherePoint::Finite(cx(1.0, 0.0)),
            SpherePoint::Infinity,
        ] {
            let back = inv.apply(m.apply(z));
            assert!(z.chordal(&back) < 1e-12);
        }
        let m2 = MobiusTransform::affine(cx(0.5, 0.5), cx(1.0, -2.0)).unwrap();
        let z = cx(0.9, 0.4);
        let lhs = m.compose(&m2).apply(SpherePoint::Finite(z));
        let rhs = m.apply(m2.apply(SpherePoint::Finite(z)));
        assert!(lhs.chordal(&rhs) < 1e-12);
        // (M^{-1})'(M(z)) M'(z) = 1.
        let w = m.apply(SpherePoint::Finite(z)).finite().unwrap();
        let prod = m.inverse_derivative(w) * m.derivative(z);
        assert!(cabs(prod - Complex::one()) < 1e-12);
    }

    #[test]
    fn construction_validates_inputs() {
        assert!(RationalMap::new(
            cx::<f64>(0.0, 0.0),
            cx(0.0, 0.0),
            poly64(&[(1.0, 0.0)]),
            poly64(&[(1.0, 0.0), (0.0, 0.0)])
        )
        .is_err());
        // Shared root between P and Q.
        assert!(RationalMap::new(
            cx::<f64>(1.0, 0.0),
            cx(0.0, 0.0),
            poly64(&[(1.0, 0.0), (-1.0, 0.0)]),
            poly64(&[(1.0, 0.0), (1.0, 0.0), (-2.0, 0.0)]),
        )
        .is_err());
        // Non-monic Q is normalized without changing the map.
        let f = RationalMap::new(
            cx::<f64>(1.0, 0.0),
            cx(0.0, 0.0),
            poly64(&[(2.0, 0.0)]),
            poly64(&[(2.0, 0.0), (2.0, 0.0)]),
        )
        .unwrap();
        assert!(cabs(f.q_poly().leading() - Complex::<f64>::one()) < 1e-15);
        let z = cx(0.7, 0.2);
        assert!(cabs(f.eval(z) - (z + cx::<f64>(2.0, 0.0) / (z.scale(2.0) + cx(2.0, 0.0)))) < 1e-14);
    }

    #[test]
    fn profile_of_simple_fixtures() {
        let prof = rational_critical_profile(&rat_nd()).unwrap();
        assert_eq!(prof.multiplicities, vec![1, 1]);
        assert!(cabs(prof.points[0] - cx(-1.0, 0.0)) < 1e-12);
        assert!(cabs(prof.points[1] - cx(1.0, 0.0)) < 1e-12);
        let v = prof.finite_values();
        assert!(cabs(v[0] - cx(-2.0, 0.0)) < 1e-12);
        assert!(cabs(v[1] - cx(2.0, 0.0)) < 1e-12);

        let prof = rational_critical_profile(&rat_h()).unwrap();
        let s = 1.0 / 2.0_f64.sqrt();
        assert!(cabs(prof.points[0] - cx(-s, 0.0)) < 1e-12);
        assert!(cabs(prof.points[1] - cx(s, 0.0)) < 1e-12);
        let v = prof.finite_values();
        assert!(cabs(v[1] - cx(2.0 * 2.0_f64.sqrt(), 0.0)) < 1e-12);
    }

    #[test]
    fn profile_with_value_at_infinity() {
        let prof = rational_critical_profile(&rat_vinf()).unwrap();
        assert_eq!(prof.len(), 4);
        assert_eq!(prof.finite_count(), 3);
        assert_eq!(prof.multiplicities.iter().sum::<usize>(), 4);
        // The double pole at the origin is a critical point with value inf.
        assert!(cabs(prof.points[3]) < 1e-10);
        assert!(prof.values[3].is_infinite());
        // Finite block: the three cube roots of 2.
        let c = 2.0_f64.powf(1.0 / 3.0);
        assert!(cabs(prof.points[2] - cx(c, 0.0)) < 1e-10);
        let v = prof.values[2].finite().unwrap();
        assert!(cabs(v - cx(c + c.powi(-2), 0.0)) < 1e-10);
    }

    #[test]
    fn fixed_points_of_rat_h() {
        let fps = fixed_points(&rat_h()).unwrap();
        assert_eq!(fps.len(), 3);
        let inf = fps.iter().find(|fp| fp.point.is_infinite()).unwrap();
        assert!(cabs(inf.multiplier - cx(0.5, 0.0)) < 1e-14);
        for fp in fps.iter().filter(|fp| !fp.point.is_infinite()) {
            let a = fp.point.finite().unwrap();
            assert!(cabs(a * a + Complex::one()) < 1e-10, "fixed points are +-i");
            assert!(cabs(fp.multiplier - cx(3.0, 0.0)) < 1e-10);
        }
    }

    #[test]
    fn classify_h_prefers_infinity() {
        // Finite fixed points have |rho| = 3 > 1/2, but the affine normalizer
        // at infinity wins.
        let cls = classify(&rat_h()).unwrap();
        assert_eq!(cls.case, SpaceCase::H);
        assert!(cls.anchor.is_infinite());
        assert!(cls.normalizer.c.is_zero(), "normalizer should be affine");
        assert!(cabs(cls.normalized.b()) < 1e-10);
        let p = cls.profile.finite_count();
        let vp = cls.profile.values[p - 1].finite().unwrap();
        assert!(cabs(vp - Complex::one()) < 1e-10);
        assert!(cabs(cls.normalized.sigma() - cx(2.0, 0.0)) < 1e-12);
    }

    #[test]
    fn classify_h_with_finite_anchor() {
        let f = rat_finite_anchor();
        let cls = classify(&f).unwrap();
        assert_eq!(cls.case, SpaceCase::H);
        let a = cls.anchor.finite().expect("anchor should be the finite fixed point");
        assert!(cabs(a - cx(-0.5, 0.0)) < 1e-10);
        // sigma of the normalized map is 1/rho = -1/3.
        assert!(cabs(cls.normalized.sigma() - cx(-1.0 / 3.0, 0.0)) < 1e-9);
        assert!(cabs(cls.normalized.b()) < 1e-9);
        let p = cls.profile.finite_count();
        assert!(cabs(cls.profile.values[p - 1].finite().unwrap() - Complex::one()) < 1e-9);

        // Conjugation consistency: M^{-1}(f(M(z))) agrees with the recomputed
        // family form pointwise.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = cls.normalizer;
        let inv = m.inverse();
        for _ in 0..25 {
            let z = SpherePoint::Finite(cx(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)));
            let lhs = inv.apply(f.eval_sphere(m.apply(z)));
            let rhs = cls.normalized.eval_sphere(z);
            assert!(lhs.chordal(&rhs) < 1e-10);
        }
    }

    #[test]
    fn classify_nn_fixture() {
        let cls = classify(&rat_nn()).unwrap();
        assert_eq!(cls.case, SpaceCase::NN);
        assert!(cabs(cls.normalized.sigma() - Complex::one()) < 1e-12);
        assert!(cabs(cls.normalized.b() - Complex::one()) < 1e-12);
        let p = cls.profile.finite_count();
        assert!(cabs(cls.profile.values[p - 1].finite().unwrap() - Complex::one()) < 1e-10);
    }

    #[test]
    fn classify_nd_fixture() {
        let cls = classify(&rat_nd()).unwrap();
        assert_eq!(cls.case, SpaceCase::ND);
        assert!(cabs(cls.normalized.sigma() - Complex::one()) < 1e-12);
        assert!(cabs(cls.normalized.b()) < 1e-12);
        let p = cls.profile.finite_count();
        assert_eq!(p, 2);
        assert!(cabs(cls.profile.values[p - 2].finite().unwrap() - Complex::one()) < 1e-10);
        assert!(cabs(cls.profile.values[p - 1].finite().unwrap()) < 1e-10);
    }

    #[test]
    fn classification_refuses_to_guess_in_the_band() {
        // b = 1e-9 sits between the hard and soft bands: NN or ND cannot be
        // resolved numerically.
        let f = RationalMap::new(
            cx::<f64>(1.0, 0.0),
            cx(1e-9, 0.0),
            poly64(&[(1.0, 0.0)]),
            poly64(&[(1.0, 0.0), (0.0, 0.0)]),
        )
        .unwrap();
        match classify(&f) {
            Err(Error::AmbiguousClassification { .. }) => {}
            other => panic!("expected AmbiguousClassification, got {other:?}"),
        }
        // Asserting a case resolves it; the conditions then only hold
        // loosely, since the scaling by 1/b amplifies roundoff.
        let opts = ClassifyOptions { assume_case: Some(SpaceCase::NN), ..Default::default() };
        let cls = classify_with(&f, &opts).unwrap();
        assert_eq!(cls.case, SpaceCase::NN);
        assert!(cabs(cls.normalized.b() - Complex::one()) < 1e-6);

        // Asserting a case the map cannot be normalized into fails loudly.
        let g = rat_nn();
        let opts = ClassifyOptions { assume_case: Some(SpaceCase::ND), ..Default::default() };
        assert!(classify_with(&g, &opts).is_err());
    }

    #[test]
    fn partial_derivative_closed_forms() {
        let f = rat_h();
        // d f / d sigma = (z/sigma) f'(z): at z = 2, f' = 2 - 1/4, sigma = 2.
        let ds = rational_partial_derivative(&f, RatDirection::Sigma).unwrap();
        assert!(cabs(ds.eval(&f, cx(2.0, 0.0)) - cx(1.75, 0.0)) < 1e-14);
        // d f / d b = f'/sigma.
        let db = rational_partial_derivative(&f, RatDirection::B).unwrap();
        let z = cx(0.4, 1.1);
        assert!(cabs(db.eval(&f, z) - f.deriv(z) / cx(2.0, 0.0)) < 1e-14);
    }

    #[test]
    fn value_partial_matches_simple_closed_form() {
        // q_k(z) = f'(z)/(f''(c_k)(z - c_k)) at simple critical points.
        let f = rat_h();
        let prof = rational_critical_profile(&f).unwrap();
        for k in 1..=2 {
            let qk = rational_partial_derivative(&f, RatDirection::V(k)).unwrap();
            let c = prof.points[k - 1];
            // f'' = 2/z^3 for f = 2z + 1/z.
            let fpp = cx::<f64>(2.0, 0.0) / (c * c * c);
            for z in crate::polymap::probe_grid(prof.scale(), 7) {
                if f.pole_distance(z) < 0.1 {
                    continue;
                }
                let closed = f.deriv(z) / (fpp * (z - c));
                assert!(cabs(qk.eval(&f, z) - closed) < 1e-12);
            }
            // Hermite conditions directly: q_k(c_j) = delta_{jk}.
            for (j, &cj) in prof.points.iter().enumerate() {
                let expect = if j + 1 == k { 1.0 } else { 0.0 };
                assert!(cabs(qk.eval(&f, cj) - cx(expect, 0.0)) < 1e-10);
            }
        }
    }

    #[test]
    fn value_partial_vanishes_at_pole_criticals() {
        let f = rat_vinf();
        let prof = rational_critical_profile(&f).unwrap();
        let qk = rational_partial_derivative(&f, RatDirection::V(1)).unwrap();
        let pt = qk.p_tilde.as_ref().unwrap();
        assert!(pt.degree() <= 2 * f.degree() - 3);
        // Ptilde vanishes at the pole-critical (origin, multiplicity 1).
        assert!(cabs(pt.eval(cx(0.0, 0.0))) < 1e-10);
        // Delta conditions at the finite criticals.
        for (j, &cj) in prof.points.iter().take(3).enumerate() {
            let expect = if j == 0 { 1.0 } else { 0.0 };
            assert!(cabs(qk.eval(&f, cj) - cx(expect, 0.0)) < 1e-9);
        }
    }

    #[test]
    fn over_fprime_is_pole_safe() {
        // q_k/f' = Ptilde/W cancels the Q^2 factors, so it stays finite at a
        // simple pole where both q_k and f' blow up. For 2z + 1/z and k = 1
        // the value at the pole z = 0 is Ptilde(0)/W(0) = (1/4)/(-1) = -1/4.
        let f = rat_h();
        let q1 = rational_partial_derivative(&f, RatDirection::V(1)).unwrap();
        let at_pole = q1.over_fprime(&f, cx(0.0, 0.0));
        assert!(cabs(at_pole - cx(-0.25, 0.0)) < 1e-12);
        // Away from poles it agrees with the plain quotient.
        let z = cx(0.6, -0.4);
        assert!(cabs(q1.over_fprime(&f, z) - q1.eval(&f, z) / f.deriv(z)) < 1e-12);
    }

    #[test]
    fn conjugated_space_profile_and_collision() {
        let f = rat_h();
        // M = 1/z, i.e. (0z+1)/(1z+0).
        let m = MobiusTransform::new(cx::<f64>(0.0, 0.0), cx(1.0, 0.0), cx(1.0, 0.0), cx(0.0, 0.0))
            .unwrap();
        let conj = mobius_conjugated_space(&f, &m, 200).unwrap();
        let s = 2.0_f64.sqrt();
        assert!(cabs(conj.profile.points[0] - cx(-s, 0.0)) < 1e-10);
        assert!(cabs(conj.profile.points[1] - cx(s, 0.0)) < 1e-10);
        let v1 = conj.profile.values[1].finite().unwrap();
        assert!(cabs(v1 - cx(1.0 / (2.0 * s), 0.0)) < 1e-10);
        // Pointwise conjugation agrees with the chain-rule derivative.
        let z = cx(0.3, 0.2);
        let h = 1e-6;
        let fd = (conj
            .eval_sphere(SpherePoint::Finite(cx(0.3 + h, 0.2)))
            .finite()
            .unwrap()
            - conj.eval_sphere(SpherePoint::Finite(cx(0.3 - h, 0.2))).finite().unwrap())
            / cx(2.0 * h, 0.0);
        assert!(cabs(fd - conj.deriv(z)) < 1e-6);

        // M(inf) = -alpha placed exactly on a critical value collides.
        let alpha = cx::<f64>(-2.0 * s, 0.0);
        let bad = MobiusTransform::new(alpha, cx(0.0, 0.0), -Complex::one(), alpha).unwrap();
        match mobius_conjugated_space(&f, &bad, 200) {
            Err(Error::OrbitCollision { .. }) => {}
            other => panic!("expected OrbitCollision, got {other:?}"),
        }
    }

    #[test]
    fn probe_mobius_clears_the_orbits() {
        for f in [rat_h(), rat_nd(), rat_vinf()] {
            let conj = choose_probe_mobius(&f, 200).unwrap();
            let m_inf = conj.mobius.apply(SpherePoint::Infinity);
            let prof = rational_critical_profile(&f).unwrap();
            for pt in mobius_avoid_set(&f, &prof, 200) {
                assert!(m_inf.chordal(&pt) >= 0.1);
            }
        }
    }

    #[test]
    fn chart_roundtrip_at_base_and_perturbed() {
        let f = rat_h();
        let coords = rational_coordinates(&f).unwrap();
        assert_eq!(coords.finite_count, 2);
        let g = rational_from_coordinates(&f, &coords, 1e-13).unwrap();
        assert!(cabs(g.sigma() - f.sigma()) < 1e-13);
        let z = cx(0.77, -0.3);
        assert!(cabs(g.eval(z) - f.eval(z)) < 1e-10);

        let mut t = coords.clone();
        t.slots[1] += cx(0.01, -0.005);
        t.sigma += cx(0.002, 0.0);
        let g = rational_from_coordinates(&f, &t, 1e-13).unwrap();
        let back = rational_coordinates(&g).unwrap();
        assert!(cabs(back.sigma - t.sigma) < 1e-12);
        assert!(cabs(back.slots[0] - t.slots[0]) < 1e-9);
        assert!(cabs(back.slots[1] - t.slots[1]) < 1e-9);
    }

    #[test]
    fn chart_moves_a_value_off_infinity() {
        // Perturbing a reciprocal slot away from 0 pulls the critical value
        // down from infinity while keeping the W-multiplicity pattern.
        let f = rat_vinf();
        let coords = rational_coordinates(&f).unwrap();
        assert_eq!(coords.finite_count, 3);
        assert!(cabs(coords.slots[3]) == 0.0);
        let mut t = coords.clone();
        t.slots[3] = cx(0.02, 0.0);
        let g = rational_from_coordinates(&f, &t, 1e-12).unwrap();
        let back = rational_coordinates(&g).unwrap();
        assert_eq!(back.finite_count, 4, "the value should now be finite");
        // The continued critical point near the origin now has value ~ 50.
        let prof = rational_critical_profile(&g).unwrap();
        let (j, _) = prof
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| cabs(*a.1).partial_cmp(&cabs(*b.1)).unwrap())
            .unwrap();
        let v = prof.values[j].finite().unwrap();
        assert!(cabs(Complex::<f64>::one() / v - cx(0.02, 0.0)) < 1e-8);
    }

    #[test]
    fn fd_checks_match_partials() {
        let f = rat_h();
        for which in [RatDirection::Sigma, RatDirection::B, RatDirection::V(1), RatDirection::V(2)]
        {
            let err = fd_check_rational_partial(&f, which, 1e-6).unwrap();
            assert!(err <= 1e-6, "direction {which}: error {err:e}");
        }
    }
}
