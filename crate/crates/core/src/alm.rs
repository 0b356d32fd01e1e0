//! Augmented Lagrangian outer loop over the implicit single-level problem.
//!
//! With the lower-level optimum treated as a function `y(x)`, the upper
//! level becomes `min_x F(x, y(x))` subject to `G(x, y(x)) <= 0` and the
//! x-box. Upper inequalities enter a Powell-Hestenes-Rockafellar penalty
//!
//! ```text
//! L_rho(x, mu) = F + 1/(2 rho) * sum_i [ max(0, mu_i + rho G_i)^2 - mu_i^2 ]
//! ```
//!
//! whose x-gradient uses the total derivatives from the sensitivity system.
//! Each outer iteration minimizes `L_rho` over the x-box with the projected
//! quasi-Newton inner solver, updates the multipliers by clipped ascent,
//! and raises `rho` only when the feasibility residual failed to shrink
//! enough. Termination is on the outer KKT residual, on a stalled-step
//! criterion for nonsmooth boundary optima, or on the iteration cap.
//!
//! Lower-level evaluations are cached per point and warm-started across
//! inner iterations. Trial points where the lower level is infeasible,
//! degenerate or unconverged evaluate as failures; the line search treats
//! those as rejected steps, which is what lets runs converge onto the
//! boundary of the implicit domain.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inner_solver::{minimize, InnerConfig, InnerError, InnerStatus};
use crate::linalg::{norm_inf, Mat};
use crate::lower_solver::{solve_lower, LowerSolution, LowerSolverConfig, LowerStatus};
use crate::par;
use crate::problem::{y_boxes_to_constraints, BilevelProblem};
use crate::sensitivity::{assemble_system, solve_system, total_gradients};

#[derive(Debug, Error)]
pub enum AlmError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error("inner solver rejected the subproblem: {0}")]
    Inner(#[from] InnerError),
}

#[derive(Debug, Clone)]
pub struct AlmConfig {
    /// Outer KKT tolerance (stationarity, feasibility, complementarity).
    pub kkt_tol: f64,
    /// Step and objective-change threshold for the stall criterion.
    pub stall_tol: f64,
    /// Gradient tolerance handed to the inner solver.
    pub inner_tol: f64,
    pub rho0: f64,
    /// Penalty growth factor, > 1.
    pub gamma: f64,
    /// Required feasibility decrease ratio, in (0, 1).
    pub feas_factor: f64,
    /// Initial multipliers; `None` means zeros.
    pub mu0: Option<Vec<f64>>,
    pub max_outer: usize,
    /// Inner solver settings; `grad_tol` is overridden by `inner_tol`.
    pub inner: InnerConfig,
    pub lower: LowerSolverConfig,
}

impl Default for AlmConfig {
    fn default() -> Self {
        AlmConfig {
            kkt_tol: 1e-5,
            stall_tol: 1e-5,
            inner_tol: 1e-6,
            rho0: 10.0,
            gamma: 10.0,
            feas_factor: 0.5,
            mu0: None,
            max_outer: 100,
            inner: InnerConfig::default(),
            lower: LowerSolverConfig::default(),
        }
    }
}

impl AlmConfig {
    pub fn validate(&self, num_upper_constraints: usize) -> Result<(), AlmError> {
        if !(self.kkt_tol > 0.0 && self.stall_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(AlmError::BadConfig("tolerances must be positive".into()));
        }
        if !(self.rho0 > 0.0) {
            return Err(AlmError::BadConfig("rho0 must be positive".into()));
        }
        if !(self.gamma > 1.0) {
            return Err(AlmError::BadConfig("gamma must exceed 1".into()));
        }
        if !(self.feas_factor > 0.0 && self.feas_factor < 1.0) {
            return Err(AlmError::BadConfig(
                "feas_factor must lie strictly between 0 and 1".into(),
            ));
        }
        if self.max_outer == 0 {
            return Err(AlmError::BadConfig("max_outer must be at least 1".into()));
        }
        if let Some(mu0) = &self.mu0 {
            if mu0.len() != num_upper_constraints {
                return Err(AlmError::BadConfig(format!(
                    "mu0 has length {}, expected {}",
                    mu0.len(),
                    num_upper_constraints
                )));
            }
            if mu0.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(AlmError::BadConfig(
                    "mu0 entries must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Outer KKT residual triple and its maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    pub overall: f64,
}

/// PHR penalty value for upper constraint values `g` at multipliers `mu`.
pub fn augmented_lagrangian_value(f_upper: f64, g: &[f64], mu: &[f64], rho: f64) -> f64 {
    let mut acc = f_upper;
    for (&gi, &mi) in g.iter().zip(mu) {
        let t = (mi + rho * gi).max(0.0);
        acc += (t * t - mi * mi) / (2.0 * rho);
    }
    acc
}

/// Gradient of the PHR penalty in `x`, given total derivatives of `F` and
/// `G` through the implicit lower solution.
pub fn augmented_lagrangian_gradient(
    grad_f: &[f64],
    jac_g: &Mat,
    g: &[f64],
    mu: &[f64],
    rho: f64,
) -> Vec<f64> {
    let mut out = grad_f.to_vec();
    for (i, (&gi, &mi)) in g.iter().zip(mu).enumerate() {
        let t = (mi + rho * gi).max(0.0);
        if t > 0.0 {
            for (o, jij) in out.iter_mut().zip(jac_g.row(i)) {
                *o += t * jij;
            }
        }
    }
    out
}

/// Clipped dual ascent: `mu <- max(0, mu + rho g)`.
pub fn dual_update(mu: &[f64], g: &[f64], rho: f64) -> Vec<f64> {
    mu.iter()
        .zip(g)
        .map(|(&mi, &gi)| (mi + rho * gi).max(0.0))
        .collect()
}

/// Raises `rho` by `gamma` iff feasibility did not improve by at least
/// `feas_factor` relative to the previous outer iteration. Returns the new
/// value and whether it grew. The first iteration never raises.
pub fn penalty_update(
    rho: f64,
    feas_now: f64,
    feas_prev: Option<f64>,
    gamma: f64,
    feas_factor: f64,
) -> (f64, bool) {
    match feas_prev {
        Some(prev) if feas_now > feas_factor * prev => (rho * gamma, true),
        _ => (rho, false),
    }
}

/// Residual triple at `(x, mu)`: stationarity of the outer Lagrangian,
/// constraint violation, and complementarity.
pub fn kkt_residuals(grad_lagrangian: &[f64], g: &[f64], mu: &[f64]) -> KktResiduals {
    let stationarity = norm_inf(grad_lagrangian);
    let feasibility = g.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0)));
    let complementarity = g
        .iter()
        .zip(mu)
        .fold(0.0f64, |acc, (&gi, &mi)| acc.max((gi * mi).abs()));
    KktResiduals {
        stationarity,
        feasibility,
        complementarity,
        overall: stationarity.max(feasibility).max(complementarity),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Kkt,
    Stalled,
    MaxOuter,
    Failed { reason: String },
}

impl Termination {
    pub fn is_success(&self) -> bool {
        matches!(self, Termination::Kkt | Termination::Stalled)
    }
}

/// One outer iteration of the trace. `x`, `y`, residuals and `g_upper` are
/// evaluated at the accepted iterate; `mu` is the multiplier after the dual
/// update; `rho` is the penalty the subproblem was solved with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub outer_iter: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub upper_objective: f64,
    pub g_upper: Vec<f64>,
    pub residuals: KktResiduals,
    pub rho: f64,
    pub mu: Vec<f64>,
    pub rho_increased: bool,
    pub inner_iterations: usize,
    pub inner_status: InnerStatus,
    /// Accepted inner objective values, starting value first.
    pub inner_objectives: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: String,
    pub start_x: Vec<f64>,
    pub termination: Termination,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub upper_objective: f64,
    pub lower_objective: f64,
    pub mu: Vec<f64>,
    /// Final lower-level multipliers (after y-box conversion).
    pub lambda: Vec<f64>,
    pub residuals: KktResiduals,
    pub outer_iterations: usize,
    pub inner_iterations_total: usize,
    pub lower_solves: usize,
    pub trace: Vec<TraceEntry>,
    pub wall_time_seconds: f64,
}

const NO_RESIDUALS: KktResiduals = KktResiduals {
    stationarity: f64::INFINITY,
    feasibility: f64::INFINITY,
    complementarity: f64::INFINITY,
    overall: f64::INFINITY,
};

/// Implicit-function evaluation at one upper point.
#[derive(Debug, Clone)]
struct PointEval {
    sol: LowerSolution,
    f_upper: f64,
    g_upper: Vec<f64>,
    grad_f: Vec<f64>,
    jac_g: Mat,
}

struct Oracle<'p> {
    p: &'p BilevelProblem,
    lower_cfg: LowerSolverConfig,
    warm: Option<LowerSolution>,
    lower_solves: usize,
    cache: Option<(Vec<f64>, PointEval)>,
}

impl<'p> Oracle<'p> {
    fn new(p: &'p BilevelProblem, lower_cfg: LowerSolverConfig) -> Self {
        Oracle {
            p,
            lower_cfg,
            warm: None,
            lower_solves: 0,
            cache: None,
        }
    }

    fn eval(&mut self, x: &[f64]) -> Result<PointEval, String> {
        if let Some((cx, ev)) = &self.cache {
            if cx.as_slice() == x {
                return Ok(ev.clone());
            }
        }
        let sol = solve_lower(self.p, x, self.warm.as_ref(), &self.lower_cfg)
            .map_err(|e| format!("lower solve failed at x={x:?}: {e}"))?;
        self.lower_solves += 1;
        if !matches!(sol.status, LowerStatus::Converged | LowerStatus::Degenerate) {
            return Err(format!(
                "lower level is {:?} at x={x:?} (kkt residual {:.3e})",
                sol.status, sol.kkt_residual
            ));
        }
        self.warm = Some(sol.clone());
        // A degenerate solution (weakly active constraints) has no two-sided
        // derivative. Dropping the zero-multiplier rows yields the one-sided
        // derivative from the inactive region, which is the useful descent
        // information at such points; the strict active set already excludes
        // them, so only the status gate needs overriding.
        let sol_for_sens = if sol.status == LowerStatus::Degenerate {
            let mut relaxed = sol.clone();
            relaxed.status = LowerStatus::Converged;
            relaxed
        } else {
            sol.clone()
        };
        let sys = assemble_system(self.p, x, &sol_for_sens).map_err(|e| e.to_string())?;
        let sens = solve_system(&sys).map_err(|e| e.to_string())?;
        let tot = total_gradients(self.p, x, &sol, &sens).map_err(|e| e.to_string())?;
        let f_upper = self
            .p
            .upper_objective
            .value(x, &sol.y)
            .map_err(|e| e.to_string())?;
        let mut g_upper = Vec::with_capacity(self.p.upper_constraints.len());
        for gf in &self.p.upper_constraints {
            g_upper.push(gf.value(x, &sol.y).map_err(|e| e.to_string())?);
        }
        let ev = PointEval {
            sol,
            f_upper,
            g_upper,
            grad_f: tot.grad_upper,
            jac_g: tot.jac_upper,
        };
        self.cache = Some((x.to_vec(), ev.clone()));
        Ok(ev)
    }
}

fn failed_report(
    problem: &str,
    start_x: &[f64],
    x: Vec<f64>,
    reason: String,
    wall: Instant,
) -> SolveReport {
    SolveReport {
        problem: problem.to_string(),
        start_x: start_x.to_vec(),
        termination: Termination::Failed { reason },
        x,
        y: Vec::new(),
        upper_objective: f64::NAN,
        lower_objective: f64::NAN,
        mu: Vec::new(),
        lambda: Vec::new(),
        residuals: NO_RESIDUALS,
        outer_iterations: 0,
        inner_iterations_total: 0,
        lower_solves: 0,
        trace: Vec::new(),
        wall_time_seconds: wall.elapsed().as_secs_f64(),
    }
}

/// Runs the outer loop from `x0`.
///
/// Configuration and dimension errors return `Err`; solver breakdowns
/// (such as an unevaluable starting point) return a report with
/// `Termination::Failed` so multistart can aggregate them.
pub fn run(
    p: &BilevelProblem,
    x0: &[f64],
    cfg: &AlmConfig,
    problem_name: &str,
) -> Result<SolveReport, AlmError> {
    if x0.len() != p.n {
        return Err(AlmError::BadInput(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            p.n
        )));
    }
    cfg.validate(p.upper_constraints.len())?;
    let clock = Instant::now();

    // The lower solver has no native bound handling; fold y-boxes into g.
    let p = y_boxes_to_constraints(p);
    let r = p.upper_constraints.len();
    let mut oracle = Oracle::new(&p, cfg.lower.clone());

    let mut x = p.project_x(x0);
    if let Err(reason) = oracle.eval(&x) {
        let lower_solves = oracle.lower_solves;
        let mut rep = failed_report(problem_name, x0, x, reason, clock);
        rep.lower_solves = lower_solves;
        return Ok(rep);
    }

    let mut mu = cfg.mu0.clone().unwrap_or_else(|| vec![0.0; r]);
    let mut rho = cfg.rho0;
    let mut feas_prev: Option<f64> = None;
    let mut prev_f_upper: Option<f64> = None;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut inner_total = 0usize;
    let mut termination = Termination::MaxOuter;

    let mut inner_cfg = cfg.inner.clone();
    inner_cfg.grad_tol = cfg.inner_tol;

    for k in 0..cfg.max_outer {
        let (mu_k, rho_k) = (mu.clone(), rho);
        let inner_res = {
            let oracle_ref = &mut oracle;
            let mu_ref = &mu_k;
            minimize(
                |xt: &[f64]| {
                    let ev = oracle_ref.eval(xt)?;
                    let value = augmented_lagrangian_value(ev.f_upper, &ev.g_upper, mu_ref, rho_k);
                    let grad = augmented_lagrangian_gradient(
                        &ev.grad_f,
                        &ev.jac_g,
                        &ev.g_upper,
                        mu_ref,
                        rho_k,
                    );
                    Ok((value, grad))
                },
                &x,
                &p.x_bounds,
                &inner_cfg,
            )
        };
        let inner_res = match inner_res {
            Ok(res) => res,
            Err(e) => {
                let lower_solves = oracle.lower_solves;
                let mut rep = failed_report(
                    problem_name,
                    x0,
                    x,
                    format!("inner solve failed: {e}"),
                    clock,
                );
                rep.lower_solves = lower_solves;
                rep.outer_iterations = k;
                rep.trace = trace;
                return Ok(rep);
            }
        };
        inner_total += inner_res.iterations;
        let x_next = inner_res.x.clone();

        // Cached from the last accepted inner step.
        let ev = match oracle.eval(&x_next) {
            Ok(ev) => ev,
            Err(reason) => {
                let lower_solves = oracle.lower_solves;
                let mut rep = failed_report(problem_name, x0, x_next, reason, clock);
                rep.lower_solves = lower_solves;
                rep.outer_iterations = k;
                rep.trace = trace;
                return Ok(rep);
            }
        };

        let mu_next = dual_update(&mu_k, &ev.g_upper, rho_k);
        let mut grad_lag = ev.grad_f.clone();
        for (i, &mi) in mu_next.iter().enumerate() {
            if mi != 0.0 {
                for (gl, jij) in grad_lag.iter_mut().zip(ev.jac_g.row(i)) {
                    *gl += mi * jij;
                }
            }
        }
        // Interior bound constraints contribute nothing; at an active bound
        // the projected stationarity measure is the right quantity.
        let stat_vec: Vec<f64> = x_next
            .iter()
            .zip(&grad_lag)
            .zip(&p.x_bounds)
            .map(|((&xi, &gi), &(lo, hi))| xi - (xi - gi).clamp(lo, hi))
            .collect();
        let mut residuals = kkt_residuals(&stat_vec, &ev.g_upper, &mu_next);
        residuals.stationarity = norm_inf(&stat_vec);
        residuals.overall = residuals
            .stationarity
            .max(residuals.feasibility)
            .max(residuals.complementarity);

        let (rho_next, rho_increased) = penalty_update(
            rho_k,
            residuals.feasibility,
            feas_prev,
            cfg.gamma,
            cfg.feas_factor,
        );

        trace.push(TraceEntry {
            outer_iter: k,
            x: x_next.clone(),
            y: ev.sol.y.clone(),
            upper_objective: ev.f_upper,
            g_upper: ev.g_upper.clone(),
            residuals,
            rho: rho_k,
            mu: mu_next.clone(),
            rho_increased,
            inner_iterations: inner_res.iterations,
            inner_status: inner_res.status,
            inner_objectives: inner_res.objective_history.clone(),
        });

        let step = norm_inf(
            &x_next
                .iter()
                .zip(&x)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        let df = prev_f_upper.map(|pf| (ev.f_upper - pf).abs());

        x = x_next;
        mu = mu_next;
        feas_prev = Some(residuals.feasibility);
        prev_f_upper = Some(ev.f_upper);

        if residuals.overall < cfg.kkt_tol {
            termination = Termination::Kkt;
            break;
        }
        if k >= 1 && step < cfg.stall_tol && df.is_some_and(|d| d < cfg.stall_tol) {
            termination = Termination::Stalled;
            break;
        }
        rho = rho_next;
    }

    // Final state from the cache (always present after a completed step).
    let ev = oracle
        .eval(&x)
        .expect("final iterate was evaluated during the loop");
    let lower_objective = p.lower_objective.value(&x, &ev.sol.y).unwrap_or(f64::NAN);
    let last = trace.last();
    Ok(SolveReport {
        problem: problem_name.to_string(),
        start_x: x0.to_vec(),
        termination,
        x,
        y: ev.sol.y.clone(),
        upper_objective: ev.f_upper,
        lower_objective,
        mu,
        lambda: ev.sol.lambda.clone(),
        residuals: last.map(|t| t.residuals).unwrap_or(NO_RESIDUALS),
        outer_iterations: trace.len(),
        inner_iterations_total: inner_total,
        lower_solves: oracle.lower_solves,
        trace,
        wall_time_seconds: clock.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultistartReport {
    pub reports: Vec<SolveReport>,
    /// Index of the best successful feasible report, if any.
    pub best: Option<usize>,
}

impl MultistartReport {
    pub fn best_report(&self) -> Option<&SolveReport> {
        self.best.map(|i| &self.reports[i])
    }

    /// One-line diagnostic per start, used when every start failed.
    pub fn failure_summary(&self) -> String {
        self.reports
            .iter()
            .map(|r| match &r.termination {
                Termination::Failed { reason } => {
                    format!("start {:?}: {}", r.start_x, reason)
                }
                t => format!("start {:?}: {:?}", r.start_x, t),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Runs the outer loop from every start (in parallel when the `parallel`
/// feature is on) and picks the feasible success with the lowest upper
/// objective. Ties prefer the earlier start, independent of scheduling.
pub fn multistart(
    p: &BilevelProblem,
    starts: &[Vec<f64>],
    cfg: &AlmConfig,
    problem_name: &str,
) -> Result<MultistartReport, AlmError> {
    if starts.is_empty() {
        return Err(AlmError::BadInput("no starting points given".into()));
    }
    for s in starts {
        if s.len() != p.n {
            return Err(AlmError::BadInput(format!(
                "start {s:?} has length {}, expected {}",
                s.len(),
                p.n
            )));
        }
    }
    cfg.validate(p.upper_constraints.len())?;
    let runs: Vec<Result<SolveReport, AlmError>> =
        par::map(starts.to_vec(), |x0| run(p, &x0, cfg, problem_name));
    let mut reports = Vec::with_capacity(runs.len());
    for r in runs {
        reports.push(r?);
    }
    let feas_tol = cfg.kkt_tol;
    let mut best: Option<usize> = None;
    for (i, rep) in reports.iter().enumerate() {
        if !rep.termination.is_success() && rep.termination != Termination::MaxOuter {
            continue;
        }
        if !(rep.residuals.feasibility <= feas_tol) {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) if rep.upper_objective < reports[b].upper_objective => best = Some(i),
            _ => {}
        }
    }
    Ok(MultistartReport { reports, best })
}
