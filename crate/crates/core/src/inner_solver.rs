//! Projected limited-memory BFGS for the box-constrained inner
//! subproblems.
//!
//! The oracle returns an objective value and gradient, or an error string
//! when the point cannot be evaluated (for the outer solver this happens
//! when the lower level is infeasible or degenerate at a trial point).
//! Failed trial evaluations are treated as rejected steps by the line
//! search, so the method can converge to the boundary of the evaluable
//! region; only a failure at the starting point is a hard error.
//!
//! Convergence is measured by the infinity norm of the projected gradient
//! step `x - P(x - grad)`. Curvature pairs that do not satisfy a strict
//! positivity margin are skipped to keep the inverse Hessian estimate
//! positive definite; a failed line search wipes the memory and retries
//! with a steepest-descent direction before giving up.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm_inf};

#[derive(Debug, Error)]
pub enum InnerError {
    #[error("objective evaluation failed at the starting point: {0}")]
    InitialEvalFailed(String),
    #[error("invalid input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone)]
pub struct InnerConfig {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Convergence threshold on the projected gradient step.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub max_linesearch: usize,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            memory: 10,
            grad_tol: 1e-6,
            max_iter: 500,
            wolfe_c1: 1e-4,
            wolfe_c2: 0.9,
            max_linesearch: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStatus {
    Converged,
    MaxIter,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub status: InnerStatus,
    /// Objective at the start followed by every accepted iterate.
    pub objective_history: Vec<f64>,
}

pub type EvalResult = Result<(f64, Vec<f64>), String>;

fn project(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
        .collect()
}

fn projected_grad_norm(x: &[f64], grad: &[f64], bounds: &[(f64, f64)]) -> f64 {
    let stepped: Vec<f64> = x
        .iter()
        .zip(grad)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| xi - (xi - gi).clamp(lo, hi))
        .collect();
    norm_inf(&stepped)
}

/// Coordinates pinned at a bound with the gradient pushing outward.
fn bound_mask(x: &[f64], grad: &[f64], bounds: &[(f64, f64)]) -> Vec<bool> {
    x.iter()
        .zip(grad)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            let eps = 1e-10 * (1.0 + xi.abs());
            (xi - lo <= eps && gi > 0.0) || (hi - xi <= eps && gi < 0.0)
        })
        .collect()
}

fn apply_mask(v: &mut [f64], mask: &[bool]) {
    for (vi, &fixed) in v.iter_mut().zip(mask) {
        if fixed {
            *vi = 0.0;
        }
    }
}

/// Largest step along `d` that stays inside the box.
fn max_step(x: &[f64], d: &[f64], bounds: &[(f64, f64)]) -> f64 {
    let mut alpha = f64::INFINITY;
    for ((&xi, &di), &(lo, hi)) in x.iter().zip(d).zip(bounds) {
        if di > 0.0 && hi.is_finite() {
            alpha = alpha.min((hi - xi) / di);
        } else if di < 0.0 && lo.is_finite() {
            alpha = alpha.min((lo - xi) / di);
        }
    }
    alpha.max(0.0)
}

struct Accepted {
    x: Vec<f64>,
    f: f64,
    grad: Vec<f64>,
    wolfe_ok: bool,
}

/// Weak Wolfe line search by bisection, with the step capped at the first
/// bound hit. Trial evaluation failures count as sufficient-decrease
/// violations and shrink the step.
#[allow(clippy::too_many_arguments)]
fn wolfe_line_search<F>(
    oracle: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    slope0: f64,
    bounds: &[(f64, f64)],
    alpha_max: f64,
    cfg: &InnerConfig,
) -> Option<Accepted>
where
    F: FnMut(&[f64]) -> EvalResult,
{
    if slope0 >= 0.0 || alpha_max <= 0.0 {
        return None;
    }
    let mut lo = 0.0f64;
    let mut hi: Option<f64> = None;
    let mut alpha = alpha_max.min(1.0);
    let mut best_armijo: Option<Accepted> = None;

    for _ in 0..cfg.max_linesearch {
        let x_t = project(
            &x.iter()
                .zip(d)
                .map(|(xi, di)| xi + alpha * di)
                .collect::<Vec<f64>>(),
            bounds,
        );
        match oracle(&x_t) {
            Err(_) => {
                hi = Some(alpha);
            }
            Ok((f_t, g_t)) => {
                if f_t > f0 + cfg.wolfe_c1 * alpha * slope0 {
                    hi = Some(alpha);
                } else {
                    let slope_t = dot(&g_t, d);
                    let acc = Accepted {
                        x: x_t,
                        f: f_t,
                        grad: g_t,
                        wolfe_ok: slope_t >= cfg.wolfe_c2 * slope0,
                    };
                    if acc.wolfe_ok {
                        return Some(acc);
                    }
                    // Sufficient decrease holds but the step is too short;
                    // remember it and push the bracket up.
                    if alpha >= alpha_max {
                        return Some(acc); // capped at a bound, cannot extend
                    }
                    best_armijo = Some(acc);
                    lo = alpha;
                }
            }
        }
        alpha = match hi {
            Some(h) => 0.5 * (lo + h),
            None => (2.0 * alpha).min(alpha_max),
        };
        if alpha <= f64::EPSILON * (1.0 + lo) {
            break;
        }
    }
    best_armijo
}

/// Minimizes the oracle over the box from `x0`.
pub fn minimize<F>(
    mut oracle: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    cfg: &InnerConfig,
) -> Result<InnerResult, InnerError>
where
    F: FnMut(&[f64]) -> EvalResult,
{
    if x0.len() != bounds.len() {
        return Err(InnerError::BadInput(format!(
            "x0 has length {}, bounds have length {}",
            x0.len(),
            bounds.len()
        )));
    }
    let mut x = project(x0, bounds);
    let (mut f, mut grad) = oracle(&x).map_err(InnerError::InitialEvalFailed)?;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut objective_history = vec![f];
    let mut iterations = 0;
    let mut status = InnerStatus::MaxIter;

    while iterations < cfg.max_iter {
        let pg = projected_grad_norm(&x, &grad, bounds);
        if pg <= cfg.grad_tol {
            status = InnerStatus::Converged;
            break;
        }
        iterations += 1;

        let mask = bound_mask(&x, &grad, bounds);
        let mut d = two_loop(&grad, &history, &mask);
        let mut slope = dot(&d, &grad);
        let d_norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g_norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if slope >= -1e-12 * d_norm * g_norm {
            // Not a reliable descent direction; fall back to projected
            // steepest descent with a fresh memory.
            history.clear();
            d = grad.iter().map(|v| -v).collect();
            apply_mask(&mut d, &mask);
            slope = dot(&d, &grad);
            if slope >= 0.0 {
                status = InnerStatus::LineSearchFailed;
                break;
            }
        }

        let alpha_max = max_step(&x, &d, bounds);
        let accepted = wolfe_line_search(&mut oracle, &x, &d, f, slope, bounds, alpha_max, cfg);
        let accepted = match accepted {
            Some(a) => a,
            None => {
                if history.is_empty() {
                    status = InnerStatus::LineSearchFailed;
                    break;
                }
                // Retry once along steepest descent before giving up.
                history.clear();
                let mut d = grad.iter().map(|v| -v).collect::<Vec<f64>>();
                apply_mask(&mut d, &mask);
                let slope = dot(&d, &grad);
                let alpha_max = max_step(&x, &d, bounds);
                match wolfe_line_search(&mut oracle, &x, &d, f, slope, bounds, alpha_max, cfg) {
                    Some(a) => a,
                    None => {
                        status = InnerStatus::LineSearchFailed;
                        break;
                    }
                }
            }
        };

        let s: Vec<f64> = accepted.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = accepted
            .grad
            .iter()
            .zip(&grad)
            .map(|(a, b)| a - b)
            .collect();
        let sy = dot(&s, &yv);
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = yv.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Skip pairs without meaningful positive curvature.
        if sy > 1e-10 * s_norm * y_norm {
            history.push_back((s, yv, sy));
            if history.len() > cfg.memory {
                history.pop_front();
            }
        }

        x = accepted.x;
        f = accepted.f;
        grad = accepted.grad;
        objective_history.push(f);
    }

    if status == InnerStatus::MaxIter && projected_grad_norm(&x, &grad, bounds) <= cfg.grad_tol {
        status = InnerStatus::Converged;
    }
    let pg = projected_grad_norm(&x, &grad, bounds);
    Ok(InnerResult {
        x,
        objective: f,
        gradient: grad,
        projected_grad_norm: pg,
        iterations,
        status,
        objective_history,
    })
}

/// Two-loop recursion for the L-BFGS direction, restricted to free
/// coordinates.
fn two_loop(
    grad: &[f64],
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    mask: &[bool],
) -> Vec<f64> {
    let mut q = grad.to_vec();
    apply_mask(&mut q, mask);
    if history.is_empty() {
        return q.iter().map(|v| -v).collect();
    }
    let mut alphas = Vec::with_capacity(history.len());
    for (s, yv, sy) in history.iter().rev() {
        let a = dot(s, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(yv) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    // Initial scaling from the most recent pair.
    let (_, y_last, sy_last) = history.back().expect("non-empty history");
    let yy = dot(y_last, y_last);
    if yy > 0.0 {
        let gamma = sy_last / yy;
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, yv, sy), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = dot(yv, &q) / sy;
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
    apply_mask(&mut d, mask);
    d
}
