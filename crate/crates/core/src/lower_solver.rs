//! Primal-dual interior-point solver for the lower-level problem.
//!
//! For fixed upper variables `x` this solves
//!
//! ```text
//! min_y f(x, y)   s.t.  g(x, y) <= 0
//! ```
//!
//! under the standing assumption that `f` is strictly convex and `g` convex
//! in `y`. Inequalities carry slacks `w > 0` and multipliers `lambda > 0`;
//! the barrier parameter decreases monotonically once the perturbed KKT
//! residual at the current barrier is met. Steps come from the reduced
//! `(m + s) x (m + s)` Newton system with a fraction-to-boundary rule and a
//! residual-norm backtracking line search. Converged iterates get a Newton
//! polish on the estimated active system so the complementarity pairs are
//! exact rather than barrier-smeared.
//!
//! The returned [`LowerSolution`] always carries the best iterate found, its
//! multipliers and the classified active set, so callers can evaluate
//! objective values even when the status is not `Converged`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{jacobian, AdError, Wrt};
use crate::linalg::{norm_inf, LinalgError, Lu, Mat};
use crate::problem::BilevelProblem;

#[derive(Debug, Error)]
pub enum LowerError {
    #[error("lower-level evaluation failed: {0}")]
    Eval(#[from] AdError),
    #[error("lower-level linear algebra failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("invalid input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone)]
pub struct LowerSolverConfig {
    /// Target for the unperturbed KKT residual.
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// A constraint with `|g_i| <= active_tol` counts as active.
    pub active_tol: f64,
    /// A multiplier above this counts as strictly positive.
    pub multiplier_tol: f64,
    pub initial_barrier: f64,
}

impl Default for LowerSolverConfig {
    fn default() -> Self {
        LowerSolverConfig {
            kkt_tol: 1e-9,
            max_iter: 200,
            active_tol: 1e-7,
            multiplier_tol: 1e-7,
            initial_barrier: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerStatus {
    Converged,
    MaxIter,
    Infeasible,
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerSolution {
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Indices of strictly active constraints, sorted ascending.
    pub active_set: Vec<usize>,
    /// Max of stationarity, feasibility and complementarity residuals.
    pub kkt_residual: f64,
    pub status: LowerStatus,
    pub iterations: usize,
}

/// Constraint classification at a candidate lower solution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSetInfo {
    pub active: Vec<usize>,
    /// Constraints with both `|g_i|` and `lambda_i` below tolerance; a
    /// nonempty list means the point is degenerate for sensitivity purposes.
    pub biactive: Vec<usize>,
}

/// Classifies constraints at `(x, y, lambda)`.
///
/// Active: `|g_i| <= active_tol` with `lambda_i > multiplier_tol`.
/// Biactive: both `|g_i|` and `lambda_i` within tolerance.
/// Everything else is inactive.
pub fn detect_active_set(
    p: &BilevelProblem,
    x: &[f64],
    y: &[f64],
    lambda: &[f64],
    cfg: &LowerSolverConfig,
) -> Result<ActiveSetInfo, LowerError> {
    let mut info = ActiveSetInfo {
        active: Vec::new(),
        biactive: Vec::new(),
    };
    for (i, g) in p.lower_constraints.iter().enumerate() {
        let gi = g.value(x, y)?;
        if gi.abs() <= cfg.active_tol {
            if lambda[i] > cfg.multiplier_tol {
                info.active.push(i);
            } else {
                info.biactive.push(i);
            }
        }
    }
    Ok(info)
}

/// Unperturbed KKT residual: stationarity, violation and complementarity.
fn kkt_residual(grad_lag: &[f64], g: &[f64], lambda: &[f64]) -> f64 {
    let stat = norm_inf(grad_lag);
    let viol = g.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0)));
    let comp = g
        .iter()
        .zip(lambda)
        .fold(0.0f64, |acc, (&gi, &li)| acc.max((gi * li).abs()));
    stat.max(viol).max(comp)
}

struct LowerEval {
    f_grad: Vec<f64>,
    /// Hessian of the Lagrangian: curvature of f plus lambda-weighted
    /// curvature of the constraints.
    h_lag: Mat,
    g: Vec<f64>,
    jac_g: Mat,
}

fn eval_lower(
    p: &BilevelProblem,
    x: &[f64],
    y: &[f64],
    lambda: &[f64],
) -> Result<LowerEval, LowerError> {
    let (_, f_grad, mut h_lag) = p.lower_objective.value_grad_hess(x, y, Wrt::Y)?;
    let s = p.lower_constraints.len();
    let mut g = vec![0.0; s];
    for (i, gi) in p.lower_constraints.iter().enumerate() {
        let (v, _, h) = gi.value_grad_hess(x, y, Wrt::Y)?;
        g[i] = v;
        if lambda[i] != 0.0 {
            for a in 0..p.m {
                for b in 0..p.m {
                    h_lag[(a, b)] += lambda[i] * h[(a, b)];
                }
            }
        }
    }
    let jac_g = jacobian(&p.lower_constraints, x, y, Wrt::Y)?;
    Ok(LowerEval {
        f_grad,
        h_lag,
        g,
        jac_g,
    })
}

fn grad_lagrangian(ev: &LowerEval, lambda: &[f64]) -> Vec<f64> {
    let mut out = ev.f_grad.clone();
    for (i, &li) in lambda.iter().enumerate() {
        if li != 0.0 {
            for (o, jij) in out.iter_mut().zip(ev.jac_g.row(i)) {
                *o += li * jij;
            }
        }
    }
    out
}

/// Solves the lower level at fixed `x`, optionally warm-started from a
/// previous solution at nearby `x`.
pub fn solve_lower(
    p: &BilevelProblem,
    x: &[f64],
    warm: Option<&LowerSolution>,
    cfg: &LowerSolverConfig,
) -> Result<LowerSolution, LowerError> {
    if x.len() != p.n {
        return Err(LowerError::BadInput(format!(
            "x has length {}, expected {}",
            x.len(),
            p.n
        )));
    }
    let s = p.lower_constraints.len();
    if s == 0 {
        return solve_unconstrained(p, x, warm, cfg);
    }
    let m = p.m;

    let warm_ok = warm.filter(|w| w.y.len() == m && w.lambda.len() == s);
    let mut y = warm_ok.map(|w| w.y.clone()).unwrap_or_else(|| vec![0.0; m]);
    let zeros = vec![0.0; s];
    let mut init = eval_lower(p, x, &y, &zeros);
    if init.is_err() && warm_ok.is_some() {
        // Recover from a bad warm point by restarting cold once.
        y = vec![0.0; m];
        init = eval_lower(p, x, &y, &zeros);
    }
    let first = init?;

    // Warm starts may sit on the boundary; keep slacks strictly positive.
    let w_floor = if warm_ok.is_some() { 1e-3 } else { 1.0 };
    let mut w: Vec<f64> = first.g.iter().map(|&gi| (-gi).max(w_floor)).collect();
    let mut lambda: Vec<f64> = match warm_ok {
        Some(ws) => ws.lambda.iter().map(|&l| l.clamp(1e-6, 1e8)).collect(),
        None => vec![cfg.initial_barrier; s],
    };

    let mut mu = cfg.initial_barrier;
    let mu_min = cfg.kkt_tol / 10.0;
    let tau = 0.995;

    let mut iter = 0usize;
    let mut best_violation = f64::INFINITY;
    let mut stagnant = 0usize;
    let mut converged = false;

    while iter < cfg.max_iter {
        iter += 1;
        // Refresh the Lagrangian Hessian with current multipliers.
        let ev = eval_lower(p, x, &y, &lambda)?;
        let grad_lag = grad_lagrangian(&ev, &lambda);
        let kkt = kkt_residual(&grad_lag, &ev.g, &lambda);
        if kkt <= cfg.kkt_tol {
            converged = true;
            break;
        }

        let violation = ev.g.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0)));
        if violation + 1e-12 < best_violation {
            best_violation = violation;
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        let lambda_max = norm_inf(&lambda);
        if (lambda_max > 1e10 && violation > 1e-9)
            || (mu <= mu_min * 1.000_001 && stagnant > 30 && best_violation > 1e-7)
        {
            return finish(p, x, y, lambda, &ev, iter, LowerStatus::Infeasible, cfg);
        }

        // Residuals at the current barrier.
        let r_d: Vec<f64> = grad_lag;
        let r_p: Vec<f64> = ev.g.iter().zip(&w).map(|(&gi, &wi)| gi + wi).collect();
        let r_c: Vec<f64> = lambda
            .iter()
            .zip(&w)
            .map(|(&li, &wi)| li * wi - mu)
            .collect();
        let perturbed = norm_inf(&r_d).max(norm_inf(&r_p)).max(norm_inf(&r_c));
        if perturbed <= mu && mu > mu_min {
            mu = (mu * 0.1).max(mu_min);
            continue;
        }

        // Reduced Newton system over (dy, dlambda).
        let dim = m + s;
        let mut k_mat = Mat::zeros(dim, dim);
        for a in 0..m {
            for b in 0..m {
                k_mat[(a, b)] = ev.h_lag[(a, b)];
            }
        }
        for i in 0..s {
            for a in 0..m {
                k_mat[(a, m + i)] = ev.jac_g[(i, a)];
                k_mat[(m + i, a)] = ev.jac_g[(i, a)];
            }
            k_mat[(m + i, m + i)] = -w[i] / lambda[i];
        }
        let mut rhs = vec![0.0; dim];
        for a in 0..m {
            rhs[a] = -r_d[a];
        }
        for i in 0..s {
            rhs[m + i] = -r_p[i] + r_c[i] / lambda[i];
        }

        // Tiny diagonal regularization on repeated singular pivots.
        let mut delta = 0.0;
        let step = loop {
            let mut sys = k_mat.clone();
            if delta > 0.0 {
                for a in 0..m {
                    sys[(a, a)] += delta;
                }
            }
            match Lu::factor(&sys, 1e-14).and_then(|lu| lu.solve(&rhs)) {
                Ok(sol) => break Some(sol),
                Err(_) => {
                    delta = if delta == 0.0 { 1e-10 } else { delta * 100.0 };
                    if delta > 1.0 {
                        break None;
                    }
                }
            }
        };
        let Some(step) = step else {
            let status = nonconverged_status(&ev.g);
            return finish(p, x, y, lambda, &ev, iter, status, cfg);
        };

        let dy = &step[0..m];
        let dl = &step[m..m + s];
        let dw: Vec<f64> = (0..s)
            .map(|i| -(r_c[i] + w[i] * dl[i]) / lambda[i])
            .collect();

        // Fraction-to-boundary step cap.
        let mut alpha: f64 = 1.0;
        for i in 0..s {
            if dw[i] < 0.0 {
                alpha = alpha.min(-tau * w[i] / dw[i]);
            }
            if dl[i] < 0.0 {
                alpha = alpha.min(-tau * lambda[i] / dl[i]);
            }
        }

        // Backtrack on the squared residual norm at the current barrier.
        let phi0: f64 = r_d.iter().map(|v| v * v).sum::<f64>()
            + r_p.iter().map(|v| v * v).sum::<f64>()
            + r_c.iter().map(|v| v * v).sum::<f64>();
        let mut accepted = false;
        for _ in 0..14 {
            let y_t: Vec<f64> = y.iter().zip(dy).map(|(v, d)| v + alpha * d).collect();
            let l_t: Vec<f64> = lambda.iter().zip(dl).map(|(v, d)| v + alpha * d).collect();
            let w_t: Vec<f64> = w.iter().zip(&dw).map(|(v, d)| v + alpha * d).collect();
            let Ok(ev_t) = eval_lower(p, x, &y_t, &l_t) else {
                alpha *= 0.5;
                continue;
            };
            let gl_t = grad_lagrangian(&ev_t, &l_t);
            let phi_t: f64 = gl_t.iter().map(|v| v * v).sum::<f64>()
                + ev_t
                    .g
                    .iter()
                    .zip(&w_t)
                    .map(|(&gi, &wi)| (gi + wi) * (gi + wi))
                    .sum::<f64>()
                + l_t
                    .iter()
                    .zip(&w_t)
                    .map(|(&li, &wi)| (li * wi - mu) * (li * wi - mu))
                    .sum::<f64>();
            if phi_t <= (1.0 - 1e-4 * alpha) * phi0 || phi_t <= 1e-30 {
                y = y_t;
                lambda = l_t;
                w = w_t;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No productive step at this barrier; tighten it and retry, or
            // give up when already at the floor.
            if mu > mu_min {
                mu = (mu * 0.1).max(mu_min);
            } else {
                let status = nonconverged_status(&ev.g);
                return finish(p, x, y, lambda, &ev, iter, status, cfg);
            }
        }
    }

    let ev = eval_lower(p, x, &y, &lambda)?;
    let status = if converged {
        LowerStatus::Converged
    } else {
        nonconverged_status(&ev.g)
    };
    finish(p, x, y, lambda, &ev, iter, status, cfg)
}

/// Status for a run that stopped short of the KKT tolerance: an iterate still
/// violating some constraint by more than 1e-6 is reported infeasible.
fn nonconverged_status(g: &[f64]) -> LowerStatus {
    let violation = g.iter().fold(0.0f64, |acc, &v| acc.max(v.max(0.0)));
    if violation > 1e-6 {
        LowerStatus::Infeasible
    } else {
        LowerStatus::MaxIter
    }
}

/// Damped Newton for the unconstrained case (`s = 0`).
fn solve_unconstrained(
    p: &BilevelProblem,
    x: &[f64],
    warm: Option<&LowerSolution>,
    cfg: &LowerSolverConfig,
) -> Result<LowerSolution, LowerError> {
    let m = p.m;
    let mut y = warm
        .filter(|w| w.y.len() == m)
        .map(|w| w.y.clone())
        .unwrap_or_else(|| vec![0.0; m]);
    let mut iter = 0usize;
    let (mut fv, mut grad, mut hess) = p.lower_objective.value_grad_hess(x, &y, Wrt::Y)?;
    while iter < cfg.max_iter {
        if norm_inf(&grad) <= cfg.kkt_tol {
            return Ok(LowerSolution {
                y,
                lambda: Vec::new(),
                active_set: Vec::new(),
                kkt_residual: norm_inf(&grad),
                status: LowerStatus::Converged,
                iterations: iter,
            });
        }
        iter += 1;
        let neg_grad: Vec<f64> = grad.iter().map(|v| -v).collect();
        let lu = match Lu::factor(&hess, 1e-14) {
            Ok(lu) => lu,
            Err(_) => {
                return Ok(LowerSolution {
                    y,
                    lambda: Vec::new(),
                    active_set: Vec::new(),
                    kkt_residual: norm_inf(&grad),
                    status: LowerStatus::Degenerate,
                    iterations: iter,
                })
            }
        };
        let d = lu.solve(&neg_grad)?;
        let slope = crate::linalg::dot(&grad, &d);
        let mut alpha = 1.0;
        let mut stepped = false;
        for _ in 0..60 {
            let y_t: Vec<f64> = y.iter().zip(&d).map(|(v, di)| v + alpha * di).collect();
            if let Ok((fv_t, g_t, h_t)) = p.lower_objective.value_grad_hess(x, &y_t, Wrt::Y) {
                if fv_t <= fv + 1e-4 * alpha * slope {
                    y = y_t;
                    fv = fv_t;
                    grad = g_t;
                    hess = h_t;
                    stepped = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    Ok(LowerSolution {
        y,
        lambda: Vec::new(),
        active_set: Vec::new(),
        kkt_residual: norm_inf(&grad),
        status: if norm_inf(&grad) <= cfg.kkt_tol {
            LowerStatus::Converged
        } else {
            LowerStatus::MaxIter
        },
        iterations: iter,
    })
}

/// Newton polish of a converged barrier iterate on its estimated active
/// system.
///
/// Interior-point pairs stop at the barrier scale, so a truly active
/// constraint with a small multiplier can sit with `|g_i|` above
/// `active_tol` while a weakly active one never reaches an exact zero
/// multiplier. Refining the equality KKT system of the multiplier-dominated
/// pairs pushes active residuals and inactive multipliers to machine
/// precision, making the threshold classification reliable. Returns `None`
/// when the estimate cannot be refined: rank-deficient active Jacobian
/// (multiplier ray), multipliers that stay negative after dropping, or a
/// polished point that fails feasibility or the KKT tolerance.
#[allow(clippy::type_complexity)]
fn polish(
    p: &BilevelProblem,
    x: &[f64],
    y0: &[f64],
    lambda0: &[f64],
    g0: &[f64],
    cfg: &LowerSolverConfig,
) -> Result<Option<(Vec<f64>, Vec<f64>)>, LowerError> {
    let m = p.m;
    let s = p.lower_constraints.len();
    let mut active: Vec<usize> = (0..s)
        .filter(|&i| lambda0[i] >= (-g0[i]).max(0.0))
        .collect();

    for _ in 0..=s {
        let a = active.len();
        let mut y = y0.to_vec();
        let mut lam_a: Vec<f64> = active.iter().map(|&i| lambda0[i]).collect();
        let mut lam_full = vec![0.0; s];

        for _ in 0..8 {
            for li in lam_full.iter_mut() {
                *li = 0.0;
            }
            for (k, &i) in active.iter().enumerate() {
                lam_full[i] = lam_a[k];
            }
            let ev = eval_lower(p, x, &y, &lam_full)?;
            let grad_lag = grad_lagrangian(&ev, &lam_full);
            let res = active
                .iter()
                .fold(norm_inf(&grad_lag), |acc, &i| acc.max(ev.g[i].abs()));
            if res <= 1e-13 * (1.0 + norm_inf(&lam_full)) {
                break;
            }
            let dim = m + a;
            let mut k_mat = Mat::zeros(dim, dim);
            for r in 0..m {
                for c in 0..m {
                    k_mat[(r, c)] = ev.h_lag[(r, c)];
                }
            }
            for (k, &i) in active.iter().enumerate() {
                for c in 0..m {
                    k_mat[(c, m + k)] = ev.jac_g[(i, c)];
                    k_mat[(m + k, c)] = ev.jac_g[(i, c)];
                }
            }
            let mut rhs = vec![0.0; dim];
            for (r, gl) in grad_lag.iter().enumerate() {
                rhs[r] = -gl;
            }
            for (k, &i) in active.iter().enumerate() {
                rhs[m + k] = -ev.g[i];
            }
            let step = match Lu::factor(&k_mat, 1e-14).and_then(|lu| lu.solve(&rhs)) {
                Ok(st) => st,
                Err(_) => return Ok(None),
            };
            for (yi, di) in y.iter_mut().zip(&step[..m]) {
                *yi += di;
            }
            for (lk, dk) in lam_a.iter_mut().zip(&step[m..]) {
                *lk += dk;
            }
        }

        // A clearly negative multiplier marks a wrong guess: drop it and
        // re-polish on the smaller set.
        let worst = lam_a
            .iter()
            .enumerate()
            .min_by(|u, v| u.1.partial_cmp(v.1).expect("non-NaN multiplier"));
        if let Some((k, &val)) = worst {
            if val < -cfg.multiplier_tol {
                active.remove(k);
                continue;
            }
        }
        for v in lam_a.iter_mut() {
            *v = v.max(0.0);
        }
        for li in lam_full.iter_mut() {
            *li = 0.0;
        }
        for (k, &i) in active.iter().enumerate() {
            lam_full[i] = lam_a[k];
        }
        let ev = eval_lower(p, x, &y, &lam_full)?;
        let feasible = ev.g.iter().all(|&gi| gi <= cfg.active_tol);
        let grad_lag = grad_lagrangian(&ev, &lam_full);
        let res = kkt_residual(&grad_lag, &ev.g, &lam_full);
        if feasible && res <= cfg.kkt_tol {
            return Ok(Some((y, lam_full)));
        }
        return Ok(None);
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &BilevelProblem,
    x: &[f64],
    y: Vec<f64>,
    lambda: Vec<f64>,
    ev: &LowerEval,
    iterations: usize,
    status: LowerStatus,
    cfg: &LowerSolverConfig,
) -> Result<LowerSolution, LowerError> {
    let (y, lambda, residual) = if status == LowerStatus::Converged {
        match polish(p, x, &y, &lambda, &ev.g, cfg)? {
            Some((py, pl)) => {
                let pev = eval_lower(p, x, &py, &pl)?;
                let pgrad = grad_lagrangian(&pev, &pl);
                let pres = kkt_residual(&pgrad, &pev.g, &pl);
                (py, pl, pres)
            }
            None => {
                let grad_lag = grad_lagrangian(ev, &lambda);
                let res = kkt_residual(&grad_lag, &ev.g, &lambda);
                (y, lambda, res)
            }
        }
    } else {
        let grad_lag = grad_lagrangian(ev, &lambda);
        let res = kkt_residual(&grad_lag, &ev.g, &lambda);
        (y, lambda, res)
    };
    let info = detect_active_set(p, x, &y, &lambda, cfg)?;
    let status = if status == LowerStatus::Converged && !info.biactive.is_empty() {
        LowerStatus::Degenerate
    } else {
        status
    };
    Ok(LowerSolution {
        y,
        lambda,
        active_set: info.active,
        kkt_residual: residual,
        status,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> LowerSolverConfig {
        LowerSolverConfig::default()
    }

    fn clark() -> BilevelProblem {
        BilevelProblem::builder(1, 1)
            .upper_objective(|x, y| (x[0] - 3.0).powi(2) + (y[0] - 2.0).powi(2))
            .lower_objective(|_x, y| (y[0] - 5.0).powi(2))
            .lower_constraint(|x, y| -2.0 * x[0] + y[0] - 1.0)
            .lower_constraint(|x, y| x[0] - 2.0 * y[0] + 2.0)
            .lower_constraint(|x, y| x[0] + 2.0 * y[0] - 14.0)
            .x_bounds(vec![(0.0, 8.0)])
            .build()
            .unwrap()
    }

    #[test]
    fn clark_lower_at_x1_hits_first_constraint() {
        let sol = solve_lower(&clark(), &[1.0], None, &cfg()).unwrap();
        assert_eq!(sol.status, LowerStatus::Converged);
        assert_relative_eq!(sol.y[0], 3.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lambda[0], 4.0, epsilon = 1e-6);
        assert_eq!(sol.active_set, vec![0]);
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn clark_lower_at_x3_is_interior() {
        let sol = solve_lower(&clark(), &[3.0], None, &cfg()).unwrap();
        assert_eq!(sol.status, LowerStatus::Converged);
        assert_relative_eq!(sol.y[0], 5.0, epsilon = 1e-7);
        assert!(sol.active_set.is_empty());
        assert!(sol.lambda.iter().all(|&l| l <= 1e-7));
    }

    #[test]
    fn single_constraint_quadratic() {
        // min y^2 s.t. x - y <= 0 at x = 2: y = 2, lambda = 4.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, _y| x[0])
            .lower_objective(|_x, y| y[0] * y[0])
            .lower_constraint(|x, y| x[0] - y[0])
            .build()
            .unwrap();
        let sol = solve_lower(&p, &[2.0], None, &cfg()).unwrap();
        assert_eq!(sol.status, LowerStatus::Converged);
        assert_relative_eq!(sol.y[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(sol.lambda[0], 4.0, epsilon = 1e-6);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn unconstrained_newton_converges_in_one_step() {
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, _y| x[0])
            .lower_objective(|_x, y| (y[0] - 5.0).powi(2))
            .build()
            .unwrap();
        let sol = solve_lower(&p, &[0.0], None, &cfg()).unwrap();
        assert_eq!(sol.status, LowerStatus::Converged);
        assert_relative_eq!(sol.y[0], 5.0, epsilon = 1e-10);
        assert!(sol.lambda.is_empty());
    }

    #[test]
    fn infeasible_constraints_are_detected() {
        // y <= -1 and y >= 1 cannot hold together.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, _y| x[0])
            .lower_objective(|_x, y| y[0] * y[0])
            .lower_constraint(|_x, y| y[0] + 1.0)
            .lower_constraint(|_x, y| 1.0 - y[0])
            .build()
            .unwrap();
        let sol = solve_lower(&p, &[0.0], None, &cfg()).unwrap();
        assert_eq!(sol.status, LowerStatus::Infeasible);
    }

    #[test]
    fn weakly_active_bound_is_degenerate() {
        // min y^2 s.t. -y <= 0: optimum at y = 0 with zero multiplier. The
        // polish drives the pair to an exact zero, exposing the weak
        // activity that the barrier iterates smear out.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, _y| x[0])
            .lower_objective(|_x, y| y[0] * y[0])
            .lower_constraint(|_x, y| -y[0])
            .build()
            .unwrap();
        let sol = solve_lower(&p, &[0.0], None, &cfg()).unwrap();
        assert_eq!(sol.status, LowerStatus::Degenerate);
        assert!(sol.y[0].abs() <= 1e-9);
        assert!(sol.lambda[0].abs() <= 1e-9);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn warm_start_reuses_previous_solution() {
        let p = clark();
        let cold = solve_lower(&p, &[1.0], None, &cfg()).unwrap();
        let warm = solve_lower(&p, &[1.001], Some(&cold), &cfg()).unwrap();
        assert_eq!(warm.status, LowerStatus::Converged);
        assert_relative_eq!(warm.y[0], 3.002, epsilon = 1e-6);
        assert!(warm.iterations <= cold.iterations);
    }

    #[test]
    fn active_set_detection_matches_rules() {
        let p = clark();
        let info = detect_active_set(&p, &[1.0], &[3.0], &[4.0, 0.0, 0.0], &cfg()).unwrap();
        assert_eq!(info.active, vec![0]);
        assert!(info.biactive.is_empty());
        // Zero multiplier on an active constraint is biactive.
        let info = detect_active_set(&p, &[1.0], &[3.0], &[0.0, 0.0, 0.0], &cfg()).unwrap();
        assert!(info.active.is_empty());
        assert_eq!(info.biactive, vec![0]);
    }
}
