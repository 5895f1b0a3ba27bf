//! Report shapes shared by the subcommands.
//!
//! Every command emits a single JSON document on stdout (or a CSV table with
//! `--format csv`). All numeric fields come with their accounting: series
//! values carry tail bounds, residuals carry tail budgets, assertion flags
//! are echoed verbatim. Field order is fixed by the struct declarations, so
//! equal inputs produce byte-identical documents.

use critlab::Error;
use serde::Serialize;

use crate::mapdef::{MapDefinition, Pair};

/// Bumped whenever a field is added, renamed or reinterpreted.
pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

/// Configuration echo. `escape_radius` is `null` when the map's own bound is
/// used.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub tolerance: f64,
    pub max_terms: usize,
    pub escape_radius: Option<f64>,
    pub probes: usize,
    pub seed: u64,
    pub format: &'static str,
}

/// User-supplied hypotheses the analysis cannot check itself. They are
/// recorded in every report rather than silently assumed.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Assertions {
    pub non_exceptional: bool,
    pub c_compact: bool,
}

#[derive(Debug, Serialize)]
pub struct ProfileEcho {
    pub points: Vec<Pair>,
    pub multiplicities: Vec<usize>,
    /// `null` marks a critical value at infinity.
    pub values: Vec<Option<Pair>>,
}

#[derive(Debug, Serialize)]
pub struct FixedPointEcho {
    pub point: Option<Pair>,
    pub multiplier: Pair,
}

#[derive(Debug, Serialize)]
pub struct ClassificationEcho {
    pub case: String,
    pub anchor: Option<Pair>,
    /// M with normalized = M^{-1} f M, as the row-major 2x2 matrix (a b; c d).
    pub normalizer: [Pair; 4],
    pub fixed_points: Vec<FixedPointEcho>,
}

#[derive(Debug, Serialize)]
pub struct OrbitSummary {
    pub slot: usize,
    pub value: Option<Pair>,
    pub termination: String,
    pub summable: bool,
    /// Partial sum of the spherical weights with its tail accounting;
    /// `weight_tail` is `null` when no geometric bound exists.
    pub weight_sum: f64,
    pub weight_tail: Option<f64>,
    pub terms_used: usize,
}

#[derive(Debug, Serialize)]
pub struct SimilarityEntry {
    pub row: String,
    pub column: String,
    pub value: Pair,
    /// `null` when the series carries no finite bound (never the case for
    /// rows that made it into the matrix).
    pub tail_bound: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MatrixReport {
    pub case: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub entries: Vec<Vec<Pair>>,
    pub tail_bounds: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub numerical_rank: usize,
    pub summable_slots: usize,
    /// Slots with critical value at infinity: exact standard basis rows,
    /// counted into the rank without entering the numeric block.
    pub infinity_rows: Vec<usize>,
    pub guaranteed_rank: usize,
}

#[derive(Debug, Serialize)]
pub struct VerdictReport {
    pub maximal: bool,
    /// Smallest singular value; `null` renders the vacuous (nothing numeric
    /// left to doubt) case, where the margin is infinite.
    pub margin: Option<f64>,
    pub tail_budget: f64,
}

/// One residual suite: order statistics over the probe set.
#[derive(Debug, Serialize)]
pub struct ResidualStats {
    pub count: usize,
    pub max: Option<f64>,
    pub median: Option<f64>,
}

impl ResidualStats {
    pub fn from_residuals(mut rs: Vec<f64>) -> Self {
        rs.sort_by(f64::total_cmp);
        let count = rs.len();
        let max = rs.last().copied();
        let median = if count == 0 {
            None
        } else if count % 2 == 1 {
            Some(rs[count / 2])
        } else {
            Some(0.5 * (rs[count / 2 - 1] + rs[count / 2]))
        };
        ResidualStats { count, max, median }
    }
}

#[derive(Debug, Serialize)]
pub struct ResolventSweep {
    pub lambda: Pair,
    pub budget: usize,
    pub residuals: ResidualStats,
    /// Largest combined truncation budget seen across probes.
    pub max_tail_budget: Option<f64>,
    /// Whether every residual stayed within its own tail budget plus
    /// roundoff slack.
    pub within_tails: bool,
}

#[derive(Debug, Serialize)]
pub struct FixedPointSuite {
    pub slot: usize,
    pub budget: usize,
    pub residuals: ResidualStats,
    pub max_tail_budget: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct IdentityReport {
    pub kernel: ResidualStats,
    pub resolvent: Vec<ResolventSweep>,
    pub fixed_point: Vec<FixedPointSuite>,
    /// Slots whose critical orbit is not summable; the fixed-point kernel is
    /// undefined there and the suite skips them.
    pub skipped_slots: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct RatioRow {
    pub m: usize,
    pub ratio: Pair,
    pub abs_error: f64,
    /// Bound on |ratio_m - L| from the remaining summed terms plus the final
    /// tail estimate; `null` when no finite bound exists.
    pub tail_bound: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RatioTable {
    pub j: usize,
    pub direction: String,
    pub limit: Pair,
    pub limit_tail_bound: Option<f64>,
    pub limit_status: String,
    pub rows: Vec<RatioRow>,
}

/// The one report shape every subcommand fills a slice of.
#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub command: &'static str,
    pub map: MapDefinition,
    pub config: ConfigEcho,
    pub assertions: Assertions,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orbits: Option<Vec<OrbitSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summable_slots: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub similarity: Option<Vec<SimilarityEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio_table: Option<RatioTable>,
}

impl Report {
    pub fn new(
        command: &'static str,
        map: MapDefinition,
        config: ConfigEcho,
        assertions: Assertions,
    ) -> Self {
        Report {
            schema_version: SCHEMA_VERSION,
            command,
            map,
            config,
            assertions,
            case: None,
            classification: None,
            profile: None,
            orbits: None,
            summable_slots: None,
            similarity: None,
            matrix: None,
            verdict: None,
            identities: None,
            ratio_table: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Errors

/// Exit codes: 0 success, 2 input error, 3 numerical non-convergence,
/// 4 inconclusive rank verdict.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::CriticalValueCollision { .. } => 2,
        Error::Inconclusive { .. } => 4,
        _ => 3,
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) | Error::CriticalValueCollision { .. } => "input",
        Error::Inconclusive { .. } => "inconclusive",
        Error::NonConvergence { .. } => "non_convergence",
        Error::DivergenceDetected { .. } => "divergence",
        Error::AmbiguousClassification { .. } => "ambiguous_classification",
        Error::SingularJacobian { .. } | Error::SingularSystem { .. } => "singular_system",
        Error::MultiplicityBroken { .. } => "multiplicity_broken",
        Error::OrbitCollision { .. } => "orbit_collision",
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorObject {
    pub schema_version: &'static str,
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl ErrorObject {
    pub fn new(kind: &'static str, message: String, exit_code: i32) -> Self {
        ErrorObject {
            schema_version: SCHEMA_VERSION,
            error: ErrorBody { kind, message, exit_code },
        }
    }

    pub fn from_core(e: &Error) -> Self {
        ErrorObject::new(error_kind(e), e.to_string(), error_exit_code(e))
    }
}

// ---------------------------------------------------------------------------
// CSV rendering

/// Formats an f64 with the same shortest-round-trip digits the JSON encoder
/// uses, so the two formats never disagree on a value.
pub fn csv_num(x: f64) -> String {
    serde_json::to_string(&x).expect("f64 always serializes")
}

pub fn csv_opt(x: Option<f64>) -> String {
    x.map(csv_num).unwrap_or_default()
}

/// CSV view of the matrix block: entries only, row and column labeled.
pub fn matrix_csv(m: &MatrixReport) -> String {
    let mut out = String::from("row,column,re,im\n");
    for (i, row) in m.rows.iter().enumerate() {
        for (jc, col) in m.columns.iter().enumerate() {
            let e = m.entries[i][jc];
            out.push_str(&format!("{row},{col},{},{}\n", csv_num(e[0]), csv_num(e[1])));
        }
    }
    out
}

pub fn ratio_csv(t: &RatioTable) -> String {
    let mut out = String::from("m,ratio_re,ratio_im,abs_error,tail_bound\n");
    for r in &t.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.m,
            csv_num(r.ratio[0]),
            csv_num(r.ratio[1]),
            csv_num(r.abs_error),
            csv_opt(r.tail_bound)
        ));
    }
    out
}

pub fn identities_csv(id: &IdentityReport) -> String {
    let mut out = String::from("suite,parameter,count,max,median\n");
    out.push_str(&format!(
        "kernel,,{},{},{}\n",
        id.kernel.count,
        csv_opt(id.kernel.max),
        csv_opt(id.kernel.median)
    ));
    for sweep in &id.resolvent {
        let [re, im] = sweep.lambda;
        let lam = if im >= 0.0 {
            format!("{}+{}i", csv_num(re), csv_num(im))
        } else {
            format!("{}-{}i", csv_num(re), csv_num(-im))
        };
        out.push_str(&format!(
            "resolvent,{lam},{},{},{}\n",
            sweep.residuals.count,
            csv_opt(sweep.residuals.max),
            csv_opt(sweep.residuals.median)
        ));
    }
    for fx in &id.fixed_point {
        out.push_str(&format!(
            "fixed_point,c{},{},{},{}\n",
            fx.slot,
            fx.residuals.count,
            csv_opt(fx.residuals.max),
            csv_opt(fx.residuals.median)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd_sets() {
        let s = ResidualStats::from_residuals(vec![3.0, 1.0, 2.0]);
        assert_eq!(s.median, Some(2.0));
        assert_eq!(s.max, Some(3.0));
        let s = ResidualStats::from_residuals(vec![4.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.median, Some(2.5));
        assert_eq!(s.count, 4);
    }

    #[test]
    fn empty_stats_are_all_null() {
        let s = ResidualStats::from_residuals(vec![]);
        assert_eq!(s.count, 0);
        assert_eq!(s.max, None);
        assert_eq!(s.median, None);
    }

    #[test]
    fn csv_numbers_match_json_rendering() {
        assert_eq!(csv_num(0.9375), "0.9375");
        assert_eq!(csv_num(2.0 / 3.0), "0.6666666666666666");
        assert_eq!(csv_opt(None), "");
    }

    #[test]
    fn input_errors_map_to_exit_two() {
        let e = Error::invalid("bad");
        assert_eq!(error_exit_code(&e), 2);
        let e = Error::Inconclusive { sigma_min: 1e-12, tail_budget: 1e-10 };
        assert_eq!(error_exit_code(&e), 4);
        let e = Error::NonConvergence { what: "x", iterations: 3, residual: 1.0 };
        assert_eq!(error_exit_code(&e), 3);
    }
}
