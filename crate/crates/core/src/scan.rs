//! One-dimensional landscape scan of the implicit upper objective.
//!
//! For problems with a single upper variable, solving the lower level on a
//! grid of x values traces `F(x, y(x))` directly. The strict active set at
//! each point is the branch signature; a signature change between adjacent
//! valid points brackets a kink of the implicit objective. Unconverged and
//! infeasible points, and points where the sensitivity matrix is singular
//! (multiplier rays at branch crossings), carry no reliable signature and
//! are excluded from kink counting; degenerate points keep their strict
//! signature so a kink landing exactly on a grid point is still counted
//! once against the neighbouring branch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lower_solver::{solve_lower, LowerSolverConfig, LowerStatus};
use crate::par;
use crate::problem::{y_boxes_to_constraints, BilevelProblem};
use crate::sensitivity::{assemble_system, solve_system};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("scan requires a one-dimensional upper level, got n = {0}")]
    NotOneDimensional(usize),
    #[error("invalid scan range: {0}")]
    BadRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    /// Converged with a usable sensitivity solve.
    Ok,
    /// Converged but with weakly active constraints (one-sided point).
    Degenerate,
    /// Lower level infeasible at this x.
    Infeasible,
    /// Lower solve did not converge or failed to evaluate.
    NotConverged,
    /// Converged but the sensitivity matrix is singular.
    SensitivityFailed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanPoint {
    pub x: f64,
    pub status: ScanStatus,
    /// Lower solution, empty when unavailable.
    pub y: Vec<f64>,
    /// Implicit objective value, NaN when unavailable.
    pub f_upper: f64,
    /// Strictly active lower constraints (branch signature).
    pub signature: Vec<usize>,
    /// dy/dx, one entry per lower variable; empty when unavailable.
    pub dy_dx: Vec<f64>,
}

/// Scans `[lo, hi]` with `points` equispaced samples, solving the lower
/// level cold at each (no warm-start hysteresis across branches).
pub fn scan(
    p: &BilevelProblem,
    lo: f64,
    hi: f64,
    points: usize,
    lower_cfg: &LowerSolverConfig,
) -> Result<Vec<ScanPoint>, ScanError> {
    if p.n != 1 {
        return Err(ScanError::NotOneDimensional(p.n));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ScanError::BadRange(format!("[{lo}, {hi}]")));
    }
    if points < 2 {
        return Err(ScanError::BadRange(format!(
            "need at least 2 points, got {points}"
        )));
    }
    let p = y_boxes_to_constraints(p);
    let step = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let cfg = lower_cfg.clone();
    Ok(par::map(xs, move |xv| scan_point(&p, xv, &cfg)))
}

fn scan_point(p: &BilevelProblem, xv: f64, cfg: &LowerSolverConfig) -> ScanPoint {
    let x = [xv];
    let sol = match solve_lower(p, &x, None, cfg) {
        Ok(sol) => sol,
        Err(_) => {
            return ScanPoint {
                x: xv,
                status: ScanStatus::NotConverged,
                y: Vec::new(),
                f_upper: f64::NAN,
                signature: Vec::new(),
                dy_dx: Vec::new(),
            }
        }
    };
    let f_at = |y: &[f64]| p.upper_objective.value(&x, y).unwrap_or(f64::NAN);
    match sol.status {
        LowerStatus::Infeasible => ScanPoint {
            x: xv,
            status: ScanStatus::Infeasible,
            y: Vec::new(),
            f_upper: f64::NAN,
            signature: Vec::new(),
            dy_dx: Vec::new(),
        },
        LowerStatus::MaxIter => ScanPoint {
            x: xv,
            status: ScanStatus::NotConverged,
            y: Vec::new(),
            f_upper: f64::NAN,
            signature: Vec::new(),
            dy_dx: Vec::new(),
        },
        LowerStatus::Degenerate => ScanPoint {
            x: xv,
            status: ScanStatus::Degenerate,
            f_upper: f_at(&sol.y),
            signature: sol.active_set.clone(),
            y: sol.y,
            dy_dx: Vec::new(),
        },
        LowerStatus::Converged => {
            let sens = assemble_system(p, &x, &sol).and_then(|sys| solve_system(&sys));
            match sens {
                Ok(sens) => {
                    let dy: Vec<f64> = (0..p.m).map(|r| sens.dy_dx[(r, 0)]).collect();
                    ScanPoint {
                        x: xv,
                        status: ScanStatus::Ok,
                        f_upper: f_at(&sol.y),
                        signature: sol.active_set.clone(),
                        y: sol.y,
                        dy_dx: dy,
                    }
                }
                Err(_) => ScanPoint {
                    x: xv,
                    status: ScanStatus::SensitivityFailed,
                    f_upper: f_at(&sol.y),
                    signature: sol.active_set.clone(),
                    y: sol.y,
                    dy_dx: Vec::new(),
                },
            }
        }
    }
}

/// Kink locations: midpoints of consecutive signature-carrying points
/// whose signatures differ. Converged and degenerate points carry a
/// signature (the strict active set; at a degenerate point the weakly
/// active rows are excluded, so it matches one adjacent branch); points
/// that failed to solve or have a singular sensitivity never participate.
pub fn signature_changes(points: &[ScanPoint]) -> Vec<f64> {
    let mut changes = Vec::new();
    let mut prev: Option<&ScanPoint> = None;
    for pt in points
        .iter()
        .filter(|p| matches!(p.status, ScanStatus::Ok | ScanStatus::Degenerate))
    {
        if let Some(pv) = prev {
            if pv.signature != pt.signature {
                changes.push(0.5 * (pv.x + pt.x));
            }
        }
        prev = Some(pt);
    }
    changes
}
