//! Command line front end for the bilevel solver.
//!
//! Four subcommands: `solve` runs one problem from explicit or gridded
//! starts, `benchmark` reproduces the registry table, `scan` samples the
//! implicit objective of a one-dimensional problem, and `list` prints the
//! registry. Human output rounds to six significant digits; `--json` and
//! `--csv` emit full-precision machine formats. Exit codes: 0 success,
//! 1 solver failure, 2 usage error.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use bilevel_core::alm::{multistart, run, AlmConfig, SolveReport, Termination};
use bilevel_core::benchmarks::{self, BenchmarkEntry};
use bilevel_core::lower_solver::LowerSolverConfig;
use bilevel_core::scan::{scan, signature_changes, ScanPoint};
use bilevel_core::stationarity::{certify, Certificate, Verdict};

const SCHEMA_VERSION: u32 = 1;
const CERT_TOL: f64 = 1e-4;
const BENCH_TOL: f64 = 1e-3;

#[derive(Parser)]
#[command(
    name = "bilevel",
    version,
    about = "Sensitivity-based augmented Lagrangian solver for bilevel programs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a registered problem and certify the result.
    Solve(SolveArgs),
    /// Solve every registered problem from its reference start.
    Benchmark(BenchmarkArgs),
    /// Sample the implicit objective of a one-dimensional problem.
    Scan(ScanArgs),
    /// List registered problems.
    List(ListArgs),
}

/// Solver parameter overrides shared by `solve` and `benchmark`.
#[derive(Args)]
struct ConfigArgs {
    /// Outer KKT tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Stall threshold on step and objective change.
    #[arg(long)]
    stall_tol: Option<f64>,
    /// Inner projected-gradient tolerance.
    #[arg(long)]
    inner_tol: Option<f64>,
    /// Initial penalty parameter.
    #[arg(long)]
    rho0: Option<f64>,
    /// Penalty growth factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Required feasibility improvement ratio.
    #[arg(long)]
    feas_factor: Option<f64>,
    /// Outer iteration cap.
    #[arg(long)]
    max_outer: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> AlmConfig {
        let mut cfg = AlmConfig::default();
        if let Some(v) = self.tol {
            cfg.kkt_tol = v;
        }
        if let Some(v) = self.stall_tol {
            cfg.stall_tol = v;
        }
        if let Some(v) = self.inner_tol {
            cfg.inner_tol = v;
        }
        if let Some(v) = self.rho0 {
            cfg.rho0 = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.feas_factor {
            cfg.feas_factor = v;
        }
        if let Some(v) = self.max_outer {
            cfg.max_outer = v;
        }
        cfg
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Registered problem name.
    problem: String,
    /// Comma-separated start, e.g. --x0 1.7 or --x0 20,20.
    #[arg(long, conflicts_with = "grid")]
    x0: Option<String>,
    /// Multistart over the problem's default grid.
    #[arg(long)]
    grid: bool,
    #[command(flatten)]
    config: ConfigArgs,
    /// Emit the full report as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Write one CSV row per start to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Zero out wall times for byte-reproducible output.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Keep only problems whose name contains this string.
    #[arg(long)]
    only: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Emit the table as JSON on stdout.
    #[arg(long)]
    json: bool,
    /// Write the table as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Zero out wall times for byte-reproducible output.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ScanArgs {
    /// Registered problem name (must have a one-dimensional upper level).
    problem: String,
    /// Scan interval, e.g. --range 0,8. Defaults to the x-box.
    #[arg(long)]
    range: Option<String>,
    /// Number of sample points.
    #[arg(long, default_value_t = 401)]
    points: usize,
    /// Emit scan points as JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Write the CSV to this path instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ListArgs {
    /// Emit the registry as JSON.
    #[arg(long)]
    json: bool,
}

/// Command failure carrying its process exit code: 1 for solver failures,
/// 2 for usage errors.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn solver_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Scan(args) => cmd_scan(args),
        Command::List(args) => cmd_list(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn lookup(name: &str) -> Result<BenchmarkEntry, Failure> {
    benchmarks::get(name).map_err(|_| {
        usage(format!(
            "unknown problem '{name}'; available: {}",
            benchmarks::names().join(", ")
        ))
    })
}

fn parse_vector(text: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("invalid number '{}' in '{text}'", t.trim())))
        })
        .collect()
}

fn parse_range(text: &str) -> Result<(f64, f64), Failure> {
    let v = parse_vector(text)?;
    if v.len() != 2 {
        return Err(usage(format!("range must be lo,hi, got '{text}'")));
    }
    Ok((v[0], v[1]))
}

/// Six-significant-digit rendering for human output.
fn sig6(v: f64) -> String {
    if !v.is_finite() || v == 0.0 {
        return format!("{v:.5}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

fn sig6_vec(vals: &[f64]) -> String {
    let parts: Vec<String> = vals.iter().map(|&v| sig6(v)).collect();
    format!("[{}]", parts.join(", "))
}

/// Full-precision space-joined vector for CSV fields.
fn csv_vec(vals: &[f64]) -> String {
    vals.iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn term_str(t: &Termination) -> String {
    match t {
        Termination::Kkt => "kkt".into(),
        Termination::Stalled => "stalled".into(),
        Termination::MaxOuter => "max_outer".into(),
        Termination::Failed { reason } => format!("failed: {reason}"),
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::SStationary => "s_stationary",
        Verdict::Violated => "violated",
        Verdict::Degenerate => "degenerate",
    }
}

fn write_output(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| solver_failure(format!("cannot write {}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunSummary {
    start_x: Vec<f64>,
    termination: String,
    upper_objective: f64,
    x: Vec<f64>,
    best: bool,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    schema_version: u32,
    report: &'a SolveReport,
    certificate: Option<&'a Certificate>,
    runs: Vec<RunSummary>,
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let entry = lookup(&args.problem)?;
    let p = entry.prepared();
    let starts: Vec<Vec<f64>> = if args.grid {
        benchmarks::default_multistart_grid(&entry).map_err(|e| usage(e.to_string()))?
    } else if let Some(text) = &args.x0 {
        let x0 = parse_vector(text)?;
        if x0.len() != p.n {
            return Err(usage(format!(
                "--x0 has {} components, problem has n = {}",
                x0.len(),
                p.n
            )));
        }
        vec![x0]
    } else {
        vec![entry.x0_best.clone()]
    };

    let cfg = args.config.build();
    let mut ms = multistart(&p, &starts, &cfg, entry.name).map_err(|e| usage(e.to_string()))?;
    if args.no_timing {
        for rep in &mut ms.reports {
            rep.wall_time_seconds = 0.0;
        }
    }
    let Some(best_idx) = ms.best else {
        return Err(solver_failure(format!(
            "no start converged: {}",
            ms.failure_summary()
        )));
    };
    let best = &ms.reports[best_idx];
    let certificate = certify(
        &p,
        &best.x,
        &best.mu,
        &LowerSolverConfig::default(),
        CERT_TOL,
    )
    .ok();

    let runs: Vec<RunSummary> = ms
        .reports
        .iter()
        .enumerate()
        .map(|(i, r)| RunSummary {
            start_x: r.start_x.clone(),
            termination: term_str(&r.termination),
            upper_objective: r.upper_objective,
            x: r.x.clone(),
            best: i == best_idx,
        })
        .collect();

    if let Some(path) = &args.csv {
        let mut csv = String::from(
            "start_x,termination,upper_objective,x,residual_overall,outer_iterations,time_seconds\n",
        );
        for r in &ms.reports {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                csv_vec(&r.start_x),
                term_str(&r.termination),
                r.upper_objective,
                csv_vec(&r.x),
                r.residuals.overall,
                r.outer_iterations,
                r.wall_time_seconds
            );
        }
        write_output(path, &csv)?;
    }

    // A feasible but unconverged best iterate is still emitted for
    // diagnostics; only kkt/stalled terminations count as success.
    let success = best.termination.is_success();
    let failure = || {
        solver_failure(format!(
            "best run terminated {} without converging",
            term_str(&best.termination)
        ))
    };

    if args.json {
        let out = SolveOutput {
            schema_version: SCHEMA_VERSION,
            report: best,
            certificate: certificate.as_ref(),
            runs,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&out)
                .map_err(|e| solver_failure(format!("serialization failed: {e}")))?
        );
        return if success { Ok(()) } else { Err(failure()) };
    }

    println!("problem           {}", best.problem);
    println!("termination       {}", term_str(&best.termination));
    println!("x                 {}", sig6_vec(&best.x));
    println!("y                 {}", sig6_vec(&best.y));
    println!("F                 {}", sig6(best.upper_objective));
    println!("f (lower)         {}", sig6(best.lower_objective));
    println!(
        "residuals         stationarity {:.3e}  feasibility {:.3e}  complementarity {:.3e}",
        best.residuals.stationarity, best.residuals.feasibility, best.residuals.complementarity
    );
    println!(
        "iterations        {} outer, {} inner, {} lower solves",
        best.outer_iterations, best.inner_iterations_total, best.lower_solves
    );
    if !args.no_timing {
        println!("wall time         {:.3}s", best.wall_time_seconds);
    }
    match &certificate {
        Some(cert) => {
            println!(
                "stationarity      {} (x {:.2e}, y {:.2e}, lambda {:.2e})",
                verdict_str(cert.report.verdict),
                cert.report.residuals.x_block,
                cert.report.residuals.y_block,
                cert.report.residuals.lambda_block
            );
            for note in &cert.report.notes {
                println!("                  note: {note}");
            }
        }
        None => println!("stationarity      unavailable"),
    }
    if runs.len() > 1 {
        println!("runs:");
        for r in &runs {
            println!(
                "  {} {} -> {} F = {} at x = {}",
                if r.best { "*" } else { " " },
                sig6_vec(&r.start_x),
                r.termination,
                sig6(r.upper_objective),
                sig6_vec(&r.x)
            );
        }
    }
    if success {
        Ok(())
    } else {
        Err(failure())
    }
}

#[derive(Serialize)]
struct BenchRow {
    name: String,
    n: usize,
    m: usize,
    x0: Vec<f64>,
    f_ref: f64,
    f_computed: Option<f64>,
    outer_iterations: Option<usize>,
    time_seconds: f64,
    termination: String,
    within_tolerance: bool,
}

#[derive(Serialize)]
struct BenchOutput {
    schema_version: u32,
    tolerance: f64,
    rows: Vec<BenchRow>,
    disputed_excluded: Vec<String>,
}

fn cmd_benchmark(args: BenchmarkArgs) -> Result<(), Failure> {
    let cfg = args.config.build();
    let mut entries = benchmarks::list();
    if let Some(filter) = &args.only {
        entries.retain(|e| e.name.contains(filter.as_str()));
        if entries.is_empty() {
            return Err(usage(format!(
                "--only '{filter}' matched nothing; available: {}",
                benchmarks::names().join(", ")
            )));
        }
    }
    entries.sort_by_key(|e| e.name);

    let mut rows = Vec::new();
    let mut disputed = Vec::new();
    for entry in &entries {
        if entry.disputed {
            disputed.push(entry.name.to_string());
            continue;
        }
        let p = entry.prepared();
        let row = match run(&p, &entry.x0_best, &cfg, entry.name) {
            Ok(rep) => BenchRow {
                name: entry.name.to_string(),
                n: entry.dims.0,
                m: entry.dims.1,
                x0: entry.x0_best.clone(),
                f_ref: entry.f_ref,
                f_computed: Some(rep.upper_objective),
                outer_iterations: Some(rep.outer_iterations),
                time_seconds: if args.no_timing {
                    0.0
                } else {
                    rep.wall_time_seconds
                },
                termination: term_str(&rep.termination),
                within_tolerance: rep.termination.is_success()
                    && (rep.upper_objective - entry.f_ref).abs() <= BENCH_TOL,
            },
            Err(e) => BenchRow {
                name: entry.name.to_string(),
                n: entry.dims.0,
                m: entry.dims.1,
                x0: entry.x0_best.clone(),
                f_ref: entry.f_ref,
                f_computed: None,
                outer_iterations: None,
                time_seconds: 0.0,
                termination: format!("error: {e}"),
                within_tolerance: false,
            },
        };
        rows.push(row);
    }

    if let Some(path) = &args.csv {
        let mut csv = String::from(
            "name,n,m,x0,f_ref,f_computed,outer_iterations,time_seconds,termination\n",
        );
        for r in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                r.name,
                r.n,
                r.m,
                csv_vec(&r.x0),
                r.f_ref,
                r.f_computed.map(|v| v.to_string()).unwrap_or_default(),
                r.outer_iterations
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                r.time_seconds,
                r.termination
            );
        }
        write_output(path, &csv)?;
    }

    if args.json {
        let out = BenchOutput {
            schema_version: SCHEMA_VERSION,
            tolerance: BENCH_TOL,
            rows,
            disputed_excluded: disputed,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&out)
                .map_err(|e| solver_failure(format!("serialization failed: {e}")))?
        );
        if out.rows.iter().any(|r| !r.within_tolerance) {
            return Err(solver_failure(
                "some problems missed their reference objective",
            ));
        }
        return Ok(());
    }

    println!(
        "{:<28} {:>6} {:>16} {:>12} {:>14} {:>6} {:>9}",
        "name", "(n,m)", "x0", "F_ref", "F_computed", "outer", "time"
    );
    for r in &rows {
        let computed = match r.f_computed {
            Some(v) => sig6(v),
            None => format!("({})", r.termination),
        };
        println!(
            "{:<28} {:>6} {:>16} {:>12} {:>14} {:>6} {:>8.3}s",
            r.name,
            format!("({},{})", r.n, r.m),
            sig6_vec(&r.x0),
            sig6(r.f_ref),
            computed,
            r.outer_iterations
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".into()),
            r.time_seconds
        );
    }
    if !disputed.is_empty() {
        println!("disputed entries excluded: {}", disputed.join(", "));
    }
    let misses: Vec<&str> = rows
        .iter()
        .filter(|r| !r.within_tolerance)
        .map(|r| r.name.as_str())
        .collect();
    if !misses.is_empty() {
        return Err(solver_failure(format!(
            "outside the {BENCH_TOL:.0e} tolerance: {}",
            misses.join(", ")
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct ScanOutput {
    schema_version: u32,
    problem: String,
    range: (f64, f64),
    points: Vec<ScanPoint>,
    signature_changes: Vec<f64>,
}

fn cmd_scan(args: ScanArgs) -> Result<(), Failure> {
    let entry = lookup(&args.problem)?;
    let p = entry.prepared();
    if p.n != 1 {
        return Err(usage(format!(
            "scan requires a one-dimensional upper level, {} has n = {}",
            entry.name, p.n
        )));
    }
    let (lo, hi) = match &args.range {
        Some(text) => parse_range(text)?,
        None => {
            let (lo, hi) = p.x_bounds[0];
            if lo.is_finite() && hi.is_finite() {
                (lo, hi)
            } else {
                let sbox = entry
                    .sample_box
                    .as_ref()
                    .ok_or_else(|| usage("problem has no x-box; pass --range lo,hi"))?;
                sbox[0]
            }
        }
    };
    let points = scan(&p, lo, hi, args.points, &LowerSolverConfig::default())
        .map_err(|e| usage(e.to_string()))?;

    if args.json {
        let out = ScanOutput {
            schema_version: SCHEMA_VERSION,
            problem: entry.name.to_string(),
            range: (lo, hi),
            signature_changes: signature_changes(&points),
            points,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&out)
                .map_err(|e| solver_failure(format!("serialization failed: {e}")))?
        );
        return Ok(());
    }

    let m = p.m;
    let mut csv = String::from("x");
    for i in 0..m {
        let _ = write!(csv, ",y{i}");
    }
    csv.push_str(",f,signature");
    for i in 0..m {
        let _ = write!(csv, ",dy{i}_dx");
    }
    csv.push('\n');
    for pt in &points {
        let _ = write!(csv, "{}", pt.x);
        for i in 0..m {
            let _ = write!(csv, ",{}", pt.y.get(i).copied().unwrap_or(f64::NAN));
        }
        let sig: Vec<String> = pt.signature.iter().map(usize::to_string).collect();
        let _ = write!(csv, ",{},{}", pt.f_upper, sig.join(";"));
        for i in 0..m {
            let _ = write!(csv, ",{}", pt.dy_dx.get(i).copied().unwrap_or(f64::NAN));
        }
        csv.push('\n');
    }
    match &args.csv {
        Some(path) => write_output(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Serialize)]
struct ListRow {
    name: String,
    n: usize,
    m: usize,
    x0_best: Vec<f64>,
    f_ref: f64,
    lp_regularized: bool,
    disputed: bool,
}

#[derive(Serialize)]
struct ListOutput {
    schema_version: u32,
    problems: Vec<ListRow>,
}

fn cmd_list(args: ListArgs) -> Result<(), Failure> {
    let rows: Vec<ListRow> = benchmarks::list()
        .iter()
        .map(|e| ListRow {
            name: e.name.to_string(),
            n: e.dims.0,
            m: e.dims.1,
            x0_best: e.x0_best.clone(),
            f_ref: e.f_ref,
            lp_regularized: e.needs_lp_regularization,
            disputed: e.disputed,
        })
        .collect();
    if args.json {
        let out = ListOutput {
            schema_version: SCHEMA_VERSION,
            problems: rows,
        };
        println!(
            "{}",
            serde_json::to_string_pretty(&out)
                .map_err(|e| solver_failure(format!("serialization failed: {e}")))?
        );
        return Ok(());
    }
    for r in &rows {
        println!(
            "{:<28} ({},{})  x0 = {:<16}  F_ref = {}{}{}",
            r.name,
            r.n,
            r.m,
            sig6_vec(&r.x0_best),
            sig6(r.f_ref),
            if r.lp_regularized {
                "  [regularized lower level]"
            } else {
                ""
            },
            if r.disputed { "  [disputed]" } else { "" }
        );
    }
    Ok(())
}
