//! Black-box tests of the installed binary: exit codes, output formats,
//! determinism, and the JSON round-trip guarantee.

use std::process::{Command, Output};

use bilevel_core::alm::SolveReport;
use serde_json::Value;

fn bilevel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilevel"))
        .args(args)
        .output()
        .expect("binary should run")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is utf-8")
}

fn temp_path(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("bilevel_cli_{}_{name}", std::process::id()))
}

#[test]
fn solve_json_round_trips_bit_exactly() {
    let out = bilevel(&["solve", "Outrata_Cervinka_2009", "--json", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).expect("valid json");
    assert_eq!(doc["schema_version"], 1);

    let report: SolveReport =
        serde_json::from_value(doc["report"].clone()).expect("report deserializes");
    let back = serde_json::to_value(&report).expect("report serializes");
    assert_eq!(back, doc["report"], "serialization round trip drifted");
}

#[test]
fn solve_json_reports_the_reference_objective() {
    let out = bilevel(&["solve", "ClarkWesterberg1990", "--x0", "1.7", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let f = doc["report"]["upper_objective"].as_f64().unwrap();
    assert!((f - 5.0).abs() <= 1e-4, "objective {f}");
    let term = doc["report"]["termination"].as_str().unwrap();
    assert!(term == "kkt" || term == "stalled", "termination {term}");
    let verdict = doc["certificate"]["report"]["verdict"].as_str().unwrap();
    assert_eq!(verdict, "s_stationary");
}

#[test]
fn identical_invocations_are_byte_identical() {
    let a = bilevel(&["solve", "Bard_1991_ex1", "--json", "--no-timing"]);
    let b = bilevel(&["solve", "Bard_1991_ex1", "--json", "--no-timing"]);
    assert_eq!(a.stdout, b.stdout);

    let a = bilevel(&["scan", "ClarkWesterberg1990", "--points", "41"]);
    let b = bilevel(&["scan", "ClarkWesterberg1990", "--points", "41"]);
    assert_eq!(a.stdout, b.stdout);

    let pa = temp_path("det_a.csv");
    let pb = temp_path("det_b.csv");
    for (path, _) in [(&pa, 0), (&pb, 1)] {
        let out = bilevel(&[
            "benchmark",
            "--only",
            "Clark",
            "--no-timing",
            "--csv",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let _ = std::fs::remove_file(pa);
    let _ = std::fs::remove_file(pb);
}

#[test]
fn unknown_problem_exits_with_usage_error_and_name_list() {
    let out = bilevel(&["solve", "NoSuchProblem"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("available:"), "stderr: {err}");
    assert!(err.contains("ClarkWesterberg1990"));
}

#[test]
fn malformed_start_vectors_are_usage_errors() {
    let out = bilevel(&["solve", "ClarkWesterberg1990", "--x0", "1,2"]);
    assert_eq!(out.status.code(), Some(2), "wrong arity should exit 2");
    let out = bilevel(&["solve", "ClarkWesterberg1990", "--x0", "abc"]);
    assert_eq!(out.status.code(), Some(2), "non-numeric should exit 2");
}

#[test]
fn solve_from_an_infeasible_start_exits_with_solver_failure() {
    let out = bilevel(&["solve", "ClarkWesterberg1990", "--x0", "8"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no start converged"));
}

#[test]
fn grid_solve_reports_every_basin() {
    let out = bilevel(&["solve", "ClarkWesterberg1990", "--grid", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("runs:"), "multistart should list runs");
    assert!(text.lines().any(|l| l.trim_start().starts_with('*')));
    assert!(
        text.contains("F                 5.00000"),
        "best objective line"
    );
}

#[test]
fn scan_rejects_multidimensional_problems() {
    let out = bilevel(&["scan", "AiyoshiShimizu1984Ex2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("one-dimensional"));
}

#[test]
fn scan_csv_is_well_formed() {
    let out = bilevel(&["scan", "ClarkWesterberg1990", "--points", "41"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(!text.contains('\r'), "LF endings only");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y0,f,signature,dy0_dx"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 41);

    // 41 points over the [0, 8] box include x = 1 where the lower branch
    // gives y = 3, F = 5, signature {0}, dy/dx = 2.
    let row: Vec<&str> = rows
        .iter()
        .map(|r| r.split(',').collect::<Vec<_>>())
        .find(|f| f[0].parse::<f64>().unwrap() == 1.0)
        .expect("x = 1 is on the grid");
    assert!((row[1].parse::<f64>().unwrap() - 3.0).abs() <= 1e-9);
    assert!((row[2].parse::<f64>().unwrap() - 5.0).abs() <= 1e-9);
    assert_eq!(row[3], "0");
    assert!((row[4].parse::<f64>().unwrap() - 2.0).abs() <= 1e-9);
}

#[test]
fn benchmark_matches_references_and_sorts_rows() {
    let out = bilevel(&["benchmark", "--json", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 13);
    let names: Vec<&str> = rows.iter().map(|r| r["name"].as_str().unwrap()).collect();
    let mut sorted = names.clone();
    sorted.sort_unstable();
    assert_eq!(names, sorted, "rows must be sorted by name");
    for r in rows {
        assert!(
            r["within_tolerance"].as_bool().unwrap(),
            "{} off reference: {:?} vs {:?}",
            r["name"],
            r["f_computed"],
            r["f_ref"]
        );
    }
}

#[test]
fn benchmark_filter_without_matches_is_a_usage_error() {
    let out = bilevel(&["benchmark", "--only", "zzz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_csv_has_header_and_one_row_per_problem() {
    let path = temp_path("bench.csv");
    let out = bilevel(&["benchmark", "--no-timing", "--csv", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&path).unwrap();
    let _ = std::fs::remove_file(&path);
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "name,n,m,x0,f_ref,f_computed,outer_iterations,time_seconds,termination"
    );
    assert_eq!(lines.len(), 14, "header plus 13 rows");
    assert!(text.ends_with('\n'));
}

#[test]
fn list_covers_the_registry() {
    let out = bilevel(&["list", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let problems = doc["problems"].as_array().unwrap();
    assert_eq!(problems.len(), 13);
    assert!(problems
        .iter()
        .any(|p| p["name"] == "Shimizu_Aiyoshi_1981_ex2" && p["f_ref"] == 225.0));
}

#[test]
fn config_overrides_are_honored() {
    // This problem needs around ten outer iterations at the default
    // tolerance, so a cap of two must surface as a solver failure.
    let out = bilevel(&[
        "solve",
        "Shimizu_Aiyoshi_1981_ex2",
        "--max-outer",
        "2",
        "--json",
        "--no-timing",
    ]);
    assert_eq!(
        out.status.code(),
        Some(1),
        "two outer iterations cannot finish"
    );
    let out = bilevel(&[
        "solve",
        "Shimizu_Aiyoshi_1981_ex2",
        "--tol",
        "1e-3",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(doc["report"]["outer_iterations"].as_u64().unwrap() <= 10);
}
