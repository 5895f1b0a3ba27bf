//! Identity suites: kernel, resolvent and fixed-point residuals over seeded
//! probe sets.
//!
//! Probes are drawn from the annulus sampler, so probe i depends only on
//! (seed, i) and reports are reproducible. Probe pairs that land on a guard
//! (x too close to f(z), or on a forward orbit) are skipped, which the
//! per-suite counts make visible. Fixed-point residuals run only on summable
//! slots: the critical kernel is an absolutely convergent series exactly
//! there, so elsewhere the identity has no content.

use critlab::orbit::{iterate_orbit, summability_diagnostic, SeriesStatus};
use critlab::probes::{annulus_probes, map_exclusions};
use critlab::ruelle::{fixed_point_residual, kernel_identity_residual, resolvent_identity_residual};
use critlab::{Error, Map64, Result, C64};

use crate::mapdef::{pair, MapDefinition};
use crate::report::{
    Assertions, ConfigEcho, FixedPointSuite, IdentityReport, Report, ResidualStats, ResolventSweep,
};

/// How many forward orbit points of each critical value the probe sampler
/// stays clear of.
const EXCLUSION_ORBIT_BUDGET: usize = 30;

/// Probe pairs with x this close to f(z) sit on the kernel guard and are
/// skipped rather than evaluated against a nearly singular identity.
const PAIR_GUARD: f64 = 1e-3;

/// Roundoff slack added to truncation budgets when deciding `within_tails`.
const ROUNDOFF_SLACK: f64 = 1e-12;

pub fn run(
    def: &MapDefinition,
    f: &Map64,
    lambdas: &[C64],
    config: ConfigEcho,
    assertions: Assertions,
) -> Result<Report> {
    let tol = config.tolerance;
    let budget = config.max_terms;
    let keep = map_exclusions(f, EXCLUSION_ORBIT_BUDGET)?;
    let zs = annulus_probes(config.seed, config.probes, &keep)?;
    let xs = annulus_probes(config.seed.wrapping_add(1), config.probes, &keep)?;

    let mut kernel = Vec::new();
    for (&z, &x) in zs.iter().zip(&xs) {
        if (f.eval(z) - x).norm() < PAIR_GUARD {
            continue;
        }
        kernel.push(kernel_identity_residual(f, z, x)?);
    }

    let mut resolvent = Vec::new();
    for &lambda in lambdas {
        let mut residuals = Vec::new();
        let mut max_tail: Option<f64> = None;
        let mut within = true;
        for (&z, &x) in zs.iter().zip(&xs) {
            if (f.eval(z) - x).norm() < PAIR_GUARD {
                continue;
            }
            let report = match resolvent_identity_residual(f, z, lambda, x, budget) {
                Ok(r) => r,
                // A probe on a guard rail (target on the forward orbit, x on
                // a critical value) is a placement artifact, not a failure of
                // the identity; the count drops by one.
                Err(Error::InvalidInput(_)) | Err(Error::CriticalValueCollision { .. }) => continue,
                Err(e) => return Err(e),
            };
            within &= report.residual <= report.tail_budget + ROUNDOFF_SLACK;
            max_tail = Some(max_tail.unwrap_or(0.0).max(report.tail_budget));
            residuals.push(report.residual);
        }
        resolvent.push(ResolventSweep {
            lambda: pair(lambda),
            budget,
            residuals: ResidualStats::from_residuals(residuals),
            max_tail_budget: max_tail,
            within_tails: within,
        });
    }

    let profile = f.critical_profile()?;
    let mut fixed_point = Vec::new();
    let mut skipped = Vec::new();
    for j in 1..=profile.len() {
        let summable_finite = match profile.values[j - 1].finite() {
            None => false,
            Some(v) => {
                let trace = iterate_orbit(f, v, budget, config.escape_radius)?;
                let diag = summability_diagnostic(&trace, tol);
                matches!(diag.status, SeriesStatus::Converged | SeriesStatus::TruncatedAtInfinity)
            }
        };
        if !summable_finite {
            skipped.push(j);
            continue;
        }
        let mut residuals = Vec::new();
        let mut max_tail: Option<f64> = None;
        for &x in &xs {
            let report = match fixed_point_residual(f, j, x, budget) {
                Ok(r) => r,
                Err(Error::InvalidInput(_)) | Err(Error::CriticalValueCollision { .. }) => continue,
                Err(e) => return Err(e),
            };
            max_tail = Some(max_tail.unwrap_or(0.0).max(report.tail_budget));
            residuals.push(report.residual);
        }
        fixed_point.push(FixedPointSuite {
            slot: j,
            budget,
            residuals: ResidualStats::from_residuals(residuals),
            max_tail_budget: max_tail,
        });
    }

    let mut report = Report::new("verify-identities", def.clone(), config, assertions);
    report.identities = Some(IdentityReport {
        kernel: ResidualStats::from_residuals(kernel),
        resolvent,
        fixed_point,
        skipped_slots: skipped,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(probes: usize) -> ConfigEcho {
        ConfigEcho {
            tolerance: 1e-10,
            max_terms: 200,
            escape_radius: None,
            probes,
            seed: 42,
            format: "json",
        }
    }

    fn flags() -> Assertions {
        Assertions { non_exceptional: false, c_compact: false }
    }

    fn lambdas() -> Vec<C64> {
        vec![C64::new(0.0, 0.0), C64::new(0.25, 0.0), C64::new(0.5, 0.0)]
    }

    #[test]
    fn chebyshev_suite_stays_below_the_identity_tolerance() {
        let def = MapDefinition::Poly { degree: 2, coeffs: vec![[-2.0, 0.0]] };
        let f = def.build().unwrap();
        let report = run(&def, &f, &lambdas(), config(25), flags()).unwrap();
        let id = report.identities.unwrap();
        assert!(id.kernel.count > 0);
        assert!(id.kernel.max.unwrap() <= 1e-9, "{:?}", id.kernel.max);
        assert!(id.resolvent.iter().all(|s| s.within_tails));
        assert_eq!(id.fixed_point.len(), 1);
        assert!(id.fixed_point[0].residuals.max.unwrap() <= 1e-9);
        assert!(id.skipped_slots.is_empty());
    }

    #[test]
    fn zero_probes_give_empty_statistics() {
        let def = MapDefinition::Poly { degree: 3, coeffs: vec![[-3.0, 0.0], [0.0, 0.0]] };
        let f = def.build().unwrap();
        let report = run(&def, &f, &lambdas(), config(0), flags()).unwrap();
        let id = report.identities.unwrap();
        assert_eq!(id.kernel.count, 0);
        assert_eq!(id.kernel.max, None);
        assert!(id.resolvent.iter().all(|s| s.residuals.count == 0));
        assert!(id.fixed_point.iter().all(|s| s.residuals.count == 0));
    }

    #[test]
    fn non_summable_slots_are_skipped_and_reported() {
        let def = MapDefinition::Rational {
            sigma: [2.0, 0.0],
            b: [0.0, 0.0],
            p: vec![[1.0, 0.0]],
            q: vec![[1.0, 0.0], [0.0, 0.0]],
        };
        let f = def.build().unwrap();
        let report = run(&def, &f, &lambdas()[..1], config(10), flags()).unwrap();
        let id = report.identities.unwrap();
        assert_eq!(id.skipped_slots, vec![1, 2]);
        assert!(id.fixed_point.is_empty());
        assert!(id.kernel.max.unwrap() <= 1e-9);
    }
}
