//! Seeded probe points for the numeric identity checks.
//!
//! Probes are drawn uniformly (by area) from the annulus 0.5 <= |x| <= 3 and
//! rejected while they sit within [`PROBE_CLEARANCE`] of any excluded point:
//! critical values, critical points, poles and recorded orbit points, so the
//! identity denominators stay well conditioned. Each probe index gets its own
//! ChaCha stream, which keeps batches reproducible no matter in which order
//! (or on how many threads) they are consumed.

use num_complex::Complex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::orbit::{iterate_orbit, Map};
use crate::scalar::{cabs, cx, real, Scalar};
use crate::Result;

pub const PROBE_INNER: f64 = 0.5;
pub const PROBE_OUTER: f64 = 3.0;

/// Minimum distance kept between a probe and every excluded point.
pub const PROBE_CLEARANCE: f64 = 1e-3;

const MAX_ATTEMPTS: usize = 1000;

/// Draws `count` probes clear of `keep_away`. Probe i is deterministic in
/// (seed, i) alone.
pub fn annulus_probes<T: Scalar>(
    seed: u64,
    count: usize,
    keep_away: &[Complex<T>],
) -> Result<Vec<Complex<T>>> {
    let clearance = real::<T>(PROBE_CLEARANCE);
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let r2 = rng.random_range(PROBE_INNER * PROBE_INNER..PROBE_OUTER * PROBE_OUTER);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let x = cx::<T>(r2.sqrt() * theta.cos(), r2.sqrt() * theta.sin());
            if keep_away.iter().all(|&e| cabs(x - e) >= clearance) {
                accepted = Some(x);
                break;
            }
        }
        match accepted {
            Some(x) => out.push(x),
            None => {
                return Err(Error::NonConvergence {
                    what: "probe sampling",
                    iterations: MAX_ATTEMPTS,
                    residual: PROBE_CLEARANCE,
                })
            }
        }
    }
    Ok(out)
}

/// Exclusion list for a map: critical points, finite critical values, poles,
/// and the first `orbit_budget` points of each critical orbit.
pub fn map_exclusions<T: Scalar>(f: &Map<T>, orbit_budget: usize) -> Result<Vec<Complex<T>>> {
    let profile = f.critical_profile()?;
    let mut out = profile.points.clone();
    if let Map::Rational(g) = f {
        out.extend(g.poles().iter().map(|&(q, _)| q));
    }
    for v in profile.finite_values() {
        let trace = iterate_orbit(f, v, orbit_budget, None)?;
        out.extend(trace.points.iter().filter_map(|p| p.finite()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymap::PolyMap;
    use crate::ratmap::RationalMap;
    use crate::scalar::cx;

    #[test]
    fn probes_stay_in_the_annulus_and_clear_exclusions() {
        let keep = [cx::<f64>(1.0, 0.0), cx(-2.0, 0.5)];
        let probes = annulus_probes(7, 200, &keep).unwrap();
        assert_eq!(probes.len(), 200);
        for x in &probes {
            let r = x.norm();
            assert!((PROBE_INNER..=PROBE_OUTER).contains(&r), "|x| = {r}");
            for e in &keep {
                assert!((x - e).norm() >= PROBE_CLEARANCE);
            }
        }
    }

    #[test]
    fn probe_i_depends_only_on_seed_and_index() {
        let a = annulus_probes::<f64>(42, 10, &[]).unwrap();
        let b = annulus_probes::<f64>(42, 4, &[]).unwrap();
        assert_eq!(&a[..4], &b[..]);
        let c = annulus_probes::<f64>(43, 4, &[]).unwrap();
        assert_ne!(a[0], c[0]);
    }

    #[test]
    fn exclusions_cover_orbit_and_poles() {
        let f: Map<f64> = PolyMap::from_real_coeffs(2, &[-2.0]).unwrap().into();
        let ex = map_exclusions(&f, 8).unwrap();
        // critical point 0, critical value -2, fixed point 2 on the orbit
        for target in [cx(0.0, 0.0), cx(-2.0, 0.0), cx(2.0, 0.0)] {
            assert!(ex.iter().any(|&e| (e - target).norm() < 1e-12));
        }

        let g: Map<f64> = RationalMap::new(
            cx(2.0, 0.0),
            cx(0.0, 0.0),
            crate::poly::ComplexPoly::new(vec![cx(1.0, 0.0)]),
            crate::poly::ComplexPoly::new(vec![cx(1.0, 0.0), cx(0.0, 0.0)]),
        )
        .unwrap()
        .into();
        let ex = map_exclusions(&g, 5).unwrap();
        assert!(ex.iter().any(|&e| e.norm() < 1e-12), "pole at the origin is excluded");
    }
}
