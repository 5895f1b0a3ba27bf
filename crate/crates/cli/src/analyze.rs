//! The analyze pipeline: profile, classification, orbit diagnostics,
//! similarity series, matrix assembly, rank verdict.

use critlab::orbit::{iterate_orbit, summability_diagnostic, Map, SeriesStatus, Termination};
use critlab::ratmap::{classify, SpaceCase};
use critlab::transversality::{
    assemble_in, assembly_space, rank_verdict, summable_indices, MatrixCase, RowLabel,
};
use critlab::{Error, Map64, Result};

use crate::mapdef::{pair, sphere, MapDefinition};
use crate::report::{
    Assertions, ClassificationEcho, ConfigEcho, FixedPointEcho, MatrixReport, OrbitSummary,
    ProfileEcho, Report, SimilarityEntry, VerdictReport,
};

/// The `--case` flag. `Auto` defers to the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFlag {
    Auto,
    H,
    NN,
    ND,
}

/// Resolves the flag to a concrete matrix case. Polynomials only accept
/// `auto`; a rational map under `auto` is classified first, while an explicit
/// case is passed through for the assembly to check.
pub fn matrix_case_for(f: &Map64, flag: CaseFlag) -> Result<MatrixCase> {
    match (f, flag) {
        (Map::Poly(_), CaseFlag::Auto) => Ok(MatrixCase::Poly),
        (Map::Poly(_), _) => {
            Err(Error::invalid("case flags describe rational maps; polynomials use --case auto"))
        }
        (Map::Rational(g), CaseFlag::Auto) => Ok(match classify(g)?.case {
            SpaceCase::H => MatrixCase::H,
            SpaceCase::NN => MatrixCase::NN,
            SpaceCase::ND => MatrixCase::ND,
        }),
        (Map::Rational(_), CaseFlag::H) => Ok(MatrixCase::H),
        (Map::Rational(_), CaseFlag::NN) => Ok(MatrixCase::NN),
        (Map::Rational(_), CaseFlag::ND) => Ok(MatrixCase::ND),
    }
}

fn termination_label(t: &Termination) -> String {
    match t {
        Termination::Budget => "budget".into(),
        Termination::HitInfinity(l) => format!("hit_infinity:{l}"),
        Termination::HitCritical(n) => format!("hit_critical:{n}"),
        Termination::Escaped(n) => format!("escaped:{n}"),
    }
}

fn row_label(r: &RowLabel) -> String {
    match r {
        RowLabel::Critical(j) => format!("c{j}"),
        RowLabel::Orbit(i) => format!("orbit{i}"),
    }
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn run(
    def: &MapDefinition,
    f: &Map64,
    flag: CaseFlag,
    config: ConfigEcho,
    assertions: Assertions,
) -> Result<Report> {
    let case = matrix_case_for(f, flag)?;
    let space = assembly_space(f, case)?;

    let mut report = Report::new("analyze", def.clone(), config, assertions);
    report.case = Some(case.to_string());

    if let Some(cls) = &space.classification {
        let m = &cls.normalizer;
        report.classification = Some(ClassificationEcho {
            case: cls.case.to_string(),
            anchor: sphere(cls.anchor),
            normalizer: [pair(m.a), pair(m.b), pair(m.c), pair(m.d)],
            fixed_points: cls
                .fixed_points
                .iter()
                .map(|fp| FixedPointEcho {
                    point: sphere(fp.point),
                    multiplier: pair(fp.multiplier),
                })
                .collect(),
        });
    }

    report.profile = Some(ProfileEcho {
        points: space.profile.points.iter().map(|&c| pair(c)).collect(),
        multiplicities: space.profile.multiplicities.clone(),
        values: space.profile.values.iter().map(|&v| sphere(v)).collect(),
    });

    let tol = report.config.tolerance;
    let max_terms = report.config.max_terms;
    let radius = report.config.escape_radius;

    let mut orbits = Vec::with_capacity(space.profile.len());
    for (idx, &v) in space.profile.values.iter().enumerate() {
        let slot = idx + 1;
        match v.finite() {
            None => orbits.push(OrbitSummary {
                slot,
                value: None,
                termination: "value_at_infinity".into(),
                summable: true,
                weight_sum: 0.0,
                weight_tail: Some(0.0),
                terms_used: 0,
            }),
            Some(v) => {
                let trace = iterate_orbit(f, v, max_terms, radius)?;
                let diag = summability_diagnostic(&trace, tol);
                orbits.push(OrbitSummary {
                    slot,
                    value: Some(pair(v)),
                    termination: termination_label(&trace.termination),
                    summable: matches!(
                        diag.status,
                        SeriesStatus::Converged | SeriesStatus::TruncatedAtInfinity
                    ),
                    weight_sum: diag.value.re,
                    weight_tail: finite_or_none(diag.tail_bound),
                    terms_used: diag.terms_used,
                });
            }
        }
    }
    report.orbits = Some(orbits);

    let s = summable_indices(&space, tol)?;
    report.summable_slots = Some(s.clone());

    let matrix = assemble_in(&space, &s, tol, max_terms)?;
    let verdict = rank_verdict(&matrix, tol)?;

    let mut similarity = Vec::with_capacity(matrix.rows.len() * matrix.columns.len());
    for (i, r) in matrix.rows.iter().enumerate() {
        for (jc, col) in matrix.columns.iter().enumerate() {
            similarity.push(SimilarityEntry {
                row: row_label(r),
                column: col.to_string(),
                value: pair(matrix.entries[(i, jc)]),
                tail_bound: finite_or_none(matrix.tail_bounds[(i, jc)]),
            });
        }
    }
    report.similarity = Some(similarity);

    report.matrix = Some(MatrixReport {
        case: matrix.case.to_string(),
        rows: matrix.rows.iter().map(row_label).collect(),
        columns: matrix.columns.iter().map(|c| c.to_string()).collect(),
        entries: (0..matrix.entries.nrows())
            .map(|i| (0..matrix.entries.ncols()).map(|j| pair(matrix.entries[(i, j)])).collect())
            .collect(),
        tail_bounds: (0..matrix.tail_bounds.nrows())
            .map(|i| (0..matrix.tail_bounds.ncols()).map(|j| matrix.tail_bounds[(i, j)]).collect())
            .collect(),
        singular_values: matrix.spectrum.values.clone(),
        numerical_rank: matrix.spectrum.rank,
        summable_slots: matrix.accounting.summable,
        infinity_rows: matrix.accounting.infinity_rows.clone(),
        guaranteed_rank: matrix.accounting.guaranteed_rank,
    });

    report.verdict = Some(VerdictReport {
        maximal: verdict.maximal,
        margin: finite_or_none(verdict.margin),
        tail_budget: matrix.tail_budget(),
    });

    Ok(report)
}
