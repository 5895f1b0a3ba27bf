//! End-to-end tests of the binary: exit codes, report schema, determinism,
//! and the documented example values.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_critlab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON: {e}\n{}", String::from_utf8_lossy(&out.stdout))
    })
}

struct Fixtures {
    dir: tempfile::TempDir,
}

impl Fixtures {
    fn new() -> Self {
        Fixtures { dir: tempfile::tempdir().expect("tempdir") }
    }

    fn write(&self, name: &str, json: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        std::fs::write(&path, json).expect("fixture write");
        path
    }

    fn chebyshev(&self) -> PathBuf {
        self.write("chebyshev.json", r#"{"type":"poly","degree":2,"coeffs":[[-2.0,0.0]]}"#)
    }

    fn cubic(&self) -> PathBuf {
        self.write(
            "cubic_pm1.json",
            r#"{"type":"poly","degree":3,"coeffs":[[-3.0,0.0],[0.0,0.0]]}"#,
        )
    }

    fn rat_h(&self) -> PathBuf {
        self.write(
            "rat_h.json",
            r#"{"type":"rational","sigma":[2.0,0.0],"b":[0.0,0.0],"P":[[1.0,0.0]],"Q":[[1.0,0.0],[0.0,0.0]]}"#,
        )
    }
}

#[test]
fn analyze_chebyshev_reports_the_limit_and_rank() {
    let fx = Fixtures::new();
    let out = run(&["analyze", "--map", fx.chebyshev().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    assert_eq!(r["schema_version"], "1");
    assert_eq!(r["case"], "poly");
    let entry = &r["matrix"]["entries"][0][0];
    assert!((entry[0].as_f64().unwrap() - 2.0 / 3.0).abs() <= 1e-12);
    assert!(entry[1].as_f64().unwrap().abs() <= 1e-12);
    assert_eq!(r["matrix"]["numerical_rank"], 1);
    assert_eq!(r["verdict"]["maximal"], true);
}

#[test]
fn analyze_cubic_reports_rank_two_with_margin() {
    let fx = Fixtures::new();
    let out = run(&["analyze", "--map", fx.cubic().to_str().unwrap()]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    assert_eq!(r["matrix"]["numerical_rank"], 2);
    assert!((r["verdict"]["margin"].as_f64().unwrap() - 0.75).abs() <= 1e-10);
    // Every reported value carries its accounting.
    for row in r["matrix"]["tail_bounds"].as_array().unwrap() {
        for t in row.as_array().unwrap() {
            assert!(t.as_f64().unwrap() >= 0.0);
        }
    }
}

#[test]
fn malformed_json_exits_two_with_a_parse_object() {
    let fx = Fixtures::new();
    let path = fx.write("bad.json", r#"{"type":"poly","degree":"#);
    let out = run(&["analyze", "--map", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let r = stdout_json(&out);
    assert_eq!(r["error"]["kind"], "parse");
    assert_eq!(r["error"]["exit_code"], 2);
}

#[test]
fn missing_map_file_exits_two() {
    let out = run(&["analyze", "--map", "/nonexistent/nowhere.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stdout_json(&out)["error"]["kind"], "io");
}

#[test]
fn case_mismatch_is_an_input_error() {
    let fx = Fixtures::new();
    let out = run(&["analyze", "--map", fx.rat_h().to_str().unwrap(), "--case", "NN"]);
    assert_eq!(out.status.code(), Some(2));
    let r = stdout_json(&out);
    assert_eq!(r["error"]["kind"], "input");
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let fx = Fixtures::new();
    let map = fx.cubic();
    let args = ["analyze", "--map", map.to_str().unwrap(), "--seed", "7"];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);

    let args = ["verify-identities", "--map", map.to_str().unwrap(), "--probes", "20"];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn catalog_definitions_feed_back_into_analyze() {
    let out = run(&["catalog"]);
    assert!(out.status.success());
    let c = stdout_json(&out);
    let fixtures = c["fixtures"].as_array().unwrap();
    let names: Vec<_> = fixtures.iter().map(|e| e["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["chebyshev", "misiurewicz_i", "cubic_pm1", "rat_h", "rat_nd"]);

    let fx = Fixtures::new();
    for e in fixtures {
        let name = e["name"].as_str().unwrap();
        let path = fx.write(&format!("{name}.json"), &e["definition"].to_string());
        let out = run(&["analyze", "--map", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let r = stdout_json(&out);
        // The bundled expectations hold against a fresh run.
        if let Some(case) = e["expected"]["case"].as_str() {
            assert_eq!(r["case"], case, "{name}");
        }
        if let Some(rank) = e["expected"]["matrix"]["rank"].as_u64() {
            assert_eq!(r["matrix"]["numerical_rank"].as_u64(), Some(rank), "{name}");
        }
        if let Some(maximal) = e["expected"]["verdict"]["maximal"].as_bool() {
            assert_eq!(r["verdict"]["maximal"].as_bool(), Some(maximal), "{name}");
        }
    }
}

#[test]
fn ratio_table_single_row_is_the_delta() {
    let fx = Fixtures::new();
    let map = fx.cubic();
    let out = run(&["ratio-table", "--map", map.to_str().unwrap(), "--j", "1", "--k", "1",
        "--m-max", "1"]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    let rows = r["ratio_table"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["ratio"][0], 1.0);
    assert_eq!(rows[0]["ratio"][1], 0.0);

    let out = run(&["ratio-table", "--map", map.to_str().unwrap(), "--j", "1", "--k", "2",
        "--m-max", "1"]);
    let r = stdout_json(&out);
    assert_eq!(r["ratio_table"]["rows"][0]["ratio"][0], 0.0);
}

#[test]
fn ratio_table_csv_has_the_documented_columns() {
    let fx = Fixtures::new();
    let out = run(&["ratio-table", "--map", fx.chebyshev().to_str().unwrap(), "--m-max", "5",
        "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m,ratio_re,ratio_im,abs_error,tail_bound"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn matrix_csv_is_row_and_column_labeled() {
    let fx = Fixtures::new();
    let out = run(&["analyze", "--map", fx.cubic().to_str().unwrap(), "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "row,column,re,im");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("c1,v1,"));
    assert!(lines[4].starts_with("c2,v2,"));
}

#[test]
fn zero_probes_exit_zero_with_empty_statistics() {
    let fx = Fixtures::new();
    let out = run(&["verify-identities", "--map", fx.cubic().to_str().unwrap(), "--probes", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let r = stdout_json(&out);
    assert_eq!(r["identities"]["kernel"]["count"], 0);
    assert_eq!(r["identities"]["kernel"]["max"], Value::Null);
}

#[test]
fn lambda_sweep_stays_within_tails_on_the_cubic() {
    let fx = Fixtures::new();
    let out = run(&["verify-identities", "--map", fx.cubic().to_str().unwrap(), "--probes", "40",
        "--max-terms", "200", "--lambda", "0", "--lambda", "0.25", "--lambda", "0.5"]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    let sweeps = r["identities"]["resolvent"].as_array().unwrap();
    assert_eq!(sweeps.len(), 3);
    for s in sweeps {
        assert_eq!(s["within_tails"], true, "lambda {:?}", s["lambda"]);
        assert!(s["residuals"]["count"].as_u64().unwrap() > 0);
    }
}

#[test]
fn config_validation_rejects_nonpositive_values() {
    let fx = Fixtures::new();
    let map = fx.chebyshev();
    for args in [
        vec!["analyze", "--map", map.to_str().unwrap(), "--tol", "0"],
        vec!["analyze", "--map", map.to_str().unwrap(), "--max-terms", "0"],
        vec!["analyze", "--map", map.to_str().unwrap(), "--escape-radius=-1"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stdout_json(&out)["error"]["kind"], "input");
    }
}

#[test]
fn assertion_flags_are_echoed() {
    let fx = Fixtures::new();
    let out = run(&["analyze", "--map", fx.rat_h().to_str().unwrap(),
        "--assert-non-exceptional", "--assert-c-compact"]);
    assert!(out.status.success());
    let r = stdout_json(&out);
    assert_eq!(r["assertions"]["non_exceptional"], true);
    assert_eq!(r["assertions"]["c_compact"], true);
}
