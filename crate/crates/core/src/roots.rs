//! Simultaneous root finding with multiplicity detection.
//!
//! Aberth-Ehrlich iteration started from a perturbed circle whose radius is
//! the Fujiwara bound, followed by single-linkage clustering of the converged
//! approximations and a Newton polish of each cluster center on the
//! (m-1)-th derivative, where the m-fold root is simple.
//!
//! The cluster threshold grows with the candidate multiplicity m: in double
//! precision an m-fold root can only be located to about eps^(1/m), so a flat
//! threshold either splits genuine multiple roots or merges distinct simple
//! ones. Distinct roots are expected to be separated by much more than the
//! m = 2 threshold.

use crate::error::Error;
use crate::poly::ComplexPoly;
use crate::scalar::{cabs, lex_cmp, real, to_f64, Scalar};
use crate::Result;
use num_complex::Complex;
use num_traits::{One, Zero};

/// A detected root with its multiplicity.
#[derive(Debug, Clone)]
pub struct RootCluster<T: Scalar> {
    /// Mean of the cluster members after polishing.
    pub center: Complex<T>,
    pub multiplicity: usize,
    /// Largest distance from a member to the center; 0 for simple roots that
    /// were polished to stagnation.
    pub radius: T,
}

/// Root-finding outcome, including per-sweep residual history so contraction
/// can be checked by callers.
#[derive(Debug, Clone)]
pub struct Roots<T: Scalar> {
    pub clusters: Vec<RootCluster<T>>,
    pub iterations: usize,
    /// max_i |p(z_i)| after each Aberth sweep.
    pub residual_history: Vec<T>,
    /// Residual acceptance tolerance actually used (relative to the
    /// backward-error scale of the evaluation).
    pub tol: T,
}

impl<T: Scalar> Roots<T> {
    /// Roots repeated by multiplicity, sorted lexicographically.
    pub fn flatten(&self) -> Vec<Complex<T>> {
        let mut out = Vec::new();
        for c in &self.clusters {
            for _ in 0..c.multiplicity {
                out.push(c.center);
            }
        }
        out
    }
}

const MAX_SWEEPS: usize = 500;

/// All roots of `p` with multiplicities. `tol` is the relative residual
/// acceptance threshold (1e-12 is a good default for f64).
pub fn find_roots<T: Scalar>(p: &ComplexPoly<T>, tol: T) -> Result<Roots<T>> {
    if p.is_zero() {
        return Err(Error::invalid("root finding on the zero polynomial"));
    }
    let n = p.degree();
    if n == 0 {
        return Err(Error::invalid("root finding on a constant polynomial"));
    }
    let eps = T::default_epsilon();
    let tol = tol.max(eps * real(4.0));

    // Monic, centered at the root mean: s(w) = p(w + center)/lead.
    let monic = p.scale(Complex::<T>::one() / p.leading());
    let center = -monic.coeff(n - 1) / Complex::new(real::<T>(n as f64), T::zero());
    let s = monic.compose_affine(Complex::one(), center);
    let ds = s.derivative();

    let radius = fujiwara_radius(&s);
    if radius <= real::<T>(1e-9) * (T::one() + cabs(center)) {
        // All roots collapse onto the mean (exact or near-exact monomial).
        return Ok(Roots {
            clusters: vec![RootCluster { center, multiplicity: n, radius }],
            iterations: 0,
            residual_history: vec![],
            tol,
        });
    }

    // Perturbed circle; the angular offset breaks real-axis symmetry, which
    // would otherwise make conjugate guesses chase the same root.
    let mut z: Vec<Complex<T>> = (0..n)
        .map(|i| {
            let theta = real::<T>(2.0 * std::f64::consts::PI * (i as f64 + 0.37137) / n as f64);
            Complex::new(theta.cos(), theta.sin()).scale(radius)
        })
        .collect();

    let mut history = Vec::new();
    let mut sweeps = 0;
    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        let mut max_step = T::zero();
        let mut max_res = T::zero();
        for i in 0..n {
            let pv = s.eval(z[i]);
            max_res = max_res.max(cabs(pv));
            let dv = ds.eval(z[i]);
            let newton = if dv.is_zero() {
                // Sitting exactly on a critical point of s; nudge instead.
                Complex::new(eps.sqrt(), eps.sqrt())
            } else {
                pv / dv
            };
            let mut repulsion = Complex::zero();
            for j in 0..n {
                if j != i {
                    let d = z[i] - z[j];
                    if !d.is_zero() {
                        repulsion += Complex::<T>::one() / d;
                    }
                }
            }
            let denom = Complex::<T>::one() - newton * repulsion;
            let step = if cabs(denom) < real(1e-14) { newton } else { newton / denom };
            z[i] -= step;
            max_step = max_step.max(cabs(step));
        }
        history.push(max_res);
        // Run to stagnation, not to first residual acceptance: multiple roots
        // keep contracting toward their eps^(1/m) ball long after |s| looks
        // converged, and the clustering needs that extra accuracy.
        let stagnant = max_step
            <= eps * real::<T>(8.0)
                * (T::one() + z.iter().map(|w| cabs(*w)).fold(T::zero(), T::max));
        if stagnant {
            break;
        }
    }

    // Post-condition: every approximation is a root of a nearby polynomial.
    let mut worst = T::zero();
    for &zi in &z {
        let rel = cabs(s.eval(zi)) / s.eval_scale(zi).max(eps);
        worst = worst.max(rel);
    }
    if worst > tol * real(1e3) {
        return Err(Error::NonConvergence {
            what: "aberth root finding",
            iterations: sweeps,
            residual: to_f64(worst),
        });
    }

    let roots: Vec<Complex<T>> = z.iter().map(|&w| w + center).collect();
    let mut clusters = cluster_roots(&roots);
    for c in &mut clusters {
        polish_cluster(p, c);
    }
    clusters.sort_by(|a, b| lex_cmp(&a.center, &b.center));
    Ok(Roots { clusters, iterations: sweeps, residual_history: history, tol })
}

/// Fujiwara bound for a monic polynomial: all roots lie in |z| <= R.
fn fujiwara_radius<T: Scalar>(monic: &ComplexPoly<T>) -> T {
    let n = monic.degree();
    let mut best = T::zero();
    for k in 1..=n {
        let mut a = cabs(monic.coeff(n - k));
        if k == n {
            a /= real(2.0);
        }
        if a > T::zero() {
            let t = a.powf(T::one() / real(k as f64));
            best = best.max(t);
        }
    }
    best * real(2.0)
}

/// Single-linkage agglomeration with a multiplicity-aware threshold:
/// merging into a cluster of total size m is allowed up to
/// max(1e-6, 1e-13^(1/m)) * (1 + max |root|).
fn cluster_roots<T: Scalar>(roots: &[Complex<T>]) -> Vec<RootCluster<T>> {
    let scale = T::one() + roots.iter().map(|z| cabs(*z)).fold(T::zero(), T::max);
    let threshold = |m: usize| -> T {
        let adaptive = real::<T>(1e-13).powf(T::one() / real(m as f64));
        real::<T>(1e-6).max(adaptive) * scale
    };

    let mut groups: Vec<Vec<Complex<T>>> = roots.iter().map(|&z| vec![z]).collect();
    loop {
        let mut best: Option<(usize, usize, T)> = None;
        for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                let mut link = T::max_value().unwrap();
                for a in &groups[i] {
                    for b in &groups[j] {
                        link = link.min(cabs(a - b));
                    }
                }
                if link <= threshold(groups[i].len() + groups[j].len())
                    && best.is_none_or(|(_, _, d)| link < d)
                {
                    best = Some((i, j, link));
                }
            }
        }
        match best {
            Some((i, j, _)) => {
                let moved = groups.remove(j);
                groups[i].extend(moved);
            }
            None => break,
        }
    }

    groups
        .into_iter()
        .map(|members| {
            let m = members.len();
            let inv = Complex::new(T::one() / real::<T>(m as f64), T::zero());
            let center = members.iter().fold(Complex::zero(), |acc: Complex<T>, &z| acc + z) * inv;
            let radius = members.iter().map(|&z| cabs(z - center)).fold(T::zero(), T::max);
            RootCluster { center, multiplicity: m, radius }
        })
        .collect()
}

/// Newton on the (m-1)-th derivative, where an m-fold root of p is simple.
/// Keeps the polished point only while it stays inside the cluster radius
/// envelope, so a bad derivative landscape cannot drag the center away.
fn polish_cluster<T: Scalar>(p: &ComplexPoly<T>, cluster: &mut RootCluster<T>) {
    let mut d = p.clone();
    for _ in 0..(cluster.multiplicity - 1) {
        d = d.derivative();
    }
    let dd = d.derivative();
    let mut x = cluster.center;
    let cap = (cluster.radius + T::default_epsilon().sqrt()) * real(8.0);
    for _ in 0..4 {
        let f = d.eval(x);
        let df = dd.eval(x);
        if df.is_zero() {
            break;
        }
        let step = f / df;
        if cabs(step) > cap {
            break;
        }
        x -= step;
    }
    if cabs(x - cluster.center) <= cap {
        cluster.center = x;
    }
}
