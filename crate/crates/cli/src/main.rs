//! critlab: analyze critical orbits of polynomials and rational maps.
//!
//! Four subcommands share one report schema: `analyze` runs the full
//! pipeline (profile, classification, orbit diagnostics, similarity series,
//! matrix, rank verdict), `verify-identities` runs the operator identity
//! suites over seeded probes, `ratio-table` tabulates the partial sums of a
//! single similarity series, and `catalog` prints the bundled fixtures.
//!
//! Reports are JSON on stdout (CSV with `--format csv`); equal inputs
//! produce byte-identical bytes. Exit codes: 0 success, 2 input error,
//! 3 numerical non-convergence, 4 inconclusive rank verdict.

mod analyze;
mod catalog;
mod mapdef;
mod ratio;
mod report;
mod verify;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use critlab::{Error, Map64, C64};

use crate::analyze::CaseFlag;
use crate::mapdef::MapDefinition;
use crate::report::{
    identities_csv, matrix_csv, ratio_csv, Assertions, ConfigEcho, ErrorObject, Format, Report,
};

#[derive(Parser)]
#[command(name = "critlab", version, about = "Critical-orbit analysis and transversality reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and report the matrix with its rank verdict.
    Analyze(AnalyzeArgs),
    /// Run the kernel, resolvent and fixed-point identity suites.
    VerifyIdentities(VerifyArgs),
    /// Tabulate the partial sums of one similarity series.
    RatioTable(RatioArgs),
    /// List the bundled fixtures with their expected values.
    Catalog(CatalogArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    Auto,
    #[value(name = "H")]
    H,
    #[value(name = "NN")]
    Nn,
    #[value(name = "ND")]
    Nd,
}

#[derive(Args)]
struct CommonArgs {
    /// Map definition file (JSON; see the catalog for the schema).
    #[arg(long)]
    map: PathBuf,

    /// Series tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,

    /// Series term budget.
    #[arg(long, default_value_t = 2000)]
    max_terms: usize,

    /// Escape radius override; the map's own bound when omitted.
    #[arg(long)]
    escape_radius: Option<f64>,

    /// Probe count for the residual suites.
    #[arg(long, default_value_t = 100)]
    probes: usize,

    /// Seed fixing every stochastic choice end to end.
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,

    /// Record your assertion that the map is not a flexible Lattes example.
    /// The analysis cannot detect the class; the flag is echoed in reports.
    #[arg(long)]
    assert_non_exceptional: bool,

    /// Record your assertion of the compactness hypothesis behind the rank
    /// theorem. Echoed in reports like the Lattes flag.
    #[arg(long)]
    assert_c_compact: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Normal form at infinity for rational maps; `auto` classifies.
    #[arg(long, value_enum, default_value_t = CaseArg::Auto)]
    case: CaseArg,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Resolvent parameter, `re` or `re,im`; repeat for a sweep.
    #[arg(long = "lambda", value_name = "LAMBDA",
          default_values_t = ["0".to_string(), "0.25".to_string(), "0.5".to_string()])]
    lambdas: Vec<String>,
}

#[derive(Args)]
struct RatioArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Row index: which critical slot the series follows.
    #[arg(long, default_value_t = 1)]
    j: usize,

    /// Column direction: a value index like `2` or `v2`, or `sigma`/`b` for
    /// rational maps.
    #[arg(long, default_value = "1")]
    k: String,

    /// Number of table rows.
    #[arg(long, default_value_t = 60)]
    m_max: usize,
}

#[derive(Args)]
struct CatalogArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Analyze(args) => run_analyze(args),
        Command::VerifyIdentities(args) => run_verify(args),
        Command::RatioTable(args) => run_ratio(args),
        Command::Catalog(args) => run_catalog(args),
    };
    std::process::exit(code);
}

// ---------------------------------------------------------------------------
// Shared plumbing

fn format_of(f: FormatArg) -> Format {
    match f {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    }
}

fn config_of(c: &CommonArgs) -> Result<ConfigEcho, ErrorObject> {
    if !(c.tol > 0.0) {
        return Err(ErrorObject::new("input", "tolerance must be positive".into(), 2));
    }
    if c.max_terms == 0 {
        return Err(ErrorObject::new("input", "max terms must be positive".into(), 2));
    }
    if let Some(r) = c.escape_radius {
        if !(r > 0.0) {
            return Err(ErrorObject::new("input", "escape radius must be positive".into(), 2));
        }
    }
    Ok(ConfigEcho {
        tolerance: c.tol,
        max_terms: c.max_terms,
        escape_radius: c.escape_radius,
        probes: c.probes,
        seed: c.seed,
        format: match c.format {
            FormatArg::Json => "json",
            FormatArg::Csv => "csv",
        },
    })
}

fn assertions_of(c: &CommonArgs) -> Assertions {
    Assertions { non_exceptional: c.assert_non_exceptional, c_compact: c.assert_c_compact }
}

fn load_map(path: &Path) -> Result<(MapDefinition, Map64), ErrorObject> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ErrorObject::new("io", format!("cannot read {}: {e}", path.display()), 2)
    })?;
    let def: MapDefinition = serde_json::from_str(&text).map_err(|e| {
        ErrorObject::new("parse", format!("{}: {e}", path.display()), 2)
    })?;
    let f = def.build().map_err(|e| ErrorObject::from_core(&e))?;
    Ok((def, f))
}

fn core_error(e: &Error) -> ErrorObject {
    ErrorObject::from_core(e)
}

/// Prints the error object on stdout (it replaces the report), a one-line
/// message on stderr, and returns the exit code.
fn fail(err: ErrorObject) -> i32 {
    let code = err.error.exit_code;
    eprintln!("critlab: {}", err.error.message);
    println!("{}", serde_json::to_string_pretty(&err).expect("error objects serialize"));
    code
}

fn emit_json<T: serde::Serialize>(value: &T) -> i32 {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
    0
}

fn emit_report(report: &Report, format: Format) -> i32 {
    match format {
        Format::Json => emit_json(report),
        Format::Csv => {
            // CSV carries the numeric table of the command; everything else
            // lives in the JSON view.
            if let Some(m) = &report.matrix {
                print!("{}", matrix_csv(m));
            } else if let Some(id) = &report.identities {
                print!("{}", identities_csv(id));
            } else if let Some(t) = &report.ratio_table {
                print!("{}", ratio_csv(t));
            }
            0
        }
    }
}

// ---------------------------------------------------------------------------
// Subcommands

fn run_analyze(args: AnalyzeArgs) -> i32 {
    let config = match config_of(&args.common) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let (def, f) = match load_map(&args.common.map) {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    let case = match args.case {
        CaseArg::Auto => CaseFlag::Auto,
        CaseArg::H => CaseFlag::H,
        CaseArg::Nn => CaseFlag::NN,
        CaseArg::Nd => CaseFlag::ND,
    };
    match analyze::run(&def, &f, case, config, assertions_of(&args.common)) {
        Ok(report) => emit_report(&report, format_of(args.common.format)),
        Err(e) => fail(core_error(&e)),
    }
}

fn parse_lambda(s: &str) -> Result<C64, ErrorObject> {
    let parse = |t: &str| {
        t.trim().parse::<f64>().map_err(|_| {
            ErrorObject::new("input", format!("lambda must be re or re,im, got {s:?}"), 2)
        })
    };
    match s.split_once(',') {
        None => Ok(C64::new(parse(s)?, 0.0)),
        Some((re, im)) => Ok(C64::new(parse(re)?, parse(im)?)),
    }
}

fn run_verify(args: VerifyArgs) -> i32 {
    let config = match config_of(&args.common) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let mut lambdas = Vec::with_capacity(args.lambdas.len());
    for s in &args.lambdas {
        match parse_lambda(s) {
            Ok(l) => lambdas.push(l),
            Err(e) => return fail(e),
        }
    }
    let (def, f) = match load_map(&args.common.map) {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    match verify::run(&def, &f, &lambdas, config, assertions_of(&args.common)) {
        Ok(report) => emit_report(&report, format_of(args.common.format)),
        Err(e) => fail(core_error(&e)),
    }
}

fn run_ratio(args: RatioArgs) -> i32 {
    let config = match config_of(&args.common) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let direction = match ratio::parse_direction(&args.k) {
        Ok(d) => d,
        Err(e) => return fail(core_error(&e)),
    };
    let (def, f) = match load_map(&args.common.map) {
        Ok(x) => x,
        Err(e) => return fail(e),
    };
    match ratio::run(&def, &f, args.j, direction, args.m_max, config, assertions_of(&args.common))
    {
        Ok(report) => emit_report(&report, format_of(args.common.format)),
        Err(e) => fail(core_error(&e)),
    }
}

fn run_catalog(args: CatalogArgs) -> i32 {
    let c = catalog::catalog();
    match format_of(args.format) {
        Format::Json => emit_json(&c),
        Format::Csv => {
            print!("{}", catalog::catalog_csv(&c));
            0
        }
    }
}
