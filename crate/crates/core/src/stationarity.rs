//! S-stationarity certificate for solved points.
//!
//! A converged outer iterate `(x, mu)` of the implicit problem is, under
//! regularity, an S-stationary point of the equivalent complementarity
//! reformulation in `(x, y, lambda)`. This module makes that constructive:
//! it solves the adjoint system `M^T [nu; w] = -[grad_y F + grad_y G^T mu; 0]`
//! on the sensitivity matrix, recovers the reformulation multipliers
//!
//! ```text
//! pi_inactive = 0,   pi_active = diag(lambda_active) w,   xi = (grad_y g) nu
//! ```
//!
//! and re-evaluates the stationarity residuals of the reformulated
//! Lagrangian together with feasibility, complementarity and the index-set
//! sign rules. The x-block residual reproduces the solver's stationarity
//! residual, which is the numerical content of the certificate.
//!
//! Two sign conventions are in play. The verdict follows the classical
//! S-stationarity rules: on strictly active indices `pi` is free (the
//! constraint acts as an equality), on inactive indices `xi` is free, and
//! only biactive indices require both to be nonnegative. The stricter
//! all-nonnegative convention is evaluated per index into `sign_rule_ok`
//! as a diagnostic; boundary optima routinely violate it while remaining
//! S-stationary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{jacobian, AdError, Wrt};
use crate::linalg::{norm_inf, LinalgError, Lu};
use crate::lower_solver::{
    detect_active_set, solve_lower, LowerError, LowerSolution, LowerSolverConfig, LowerStatus,
};
use crate::problem::{y_boxes_to_constraints, BilevelProblem};
use crate::sensitivity::{assemble_system, SensitivityError, PIVOT_THRESHOLD, RESIDUAL_BOUND};

/// Default certificate tolerance. Looser than the solver tolerance because
/// multiplier recovery composes several linear solves; the certificate is a
/// diagnostic, not a convergence gate.
pub const CERT_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StationarityError {
    #[error("lower-level solve failed: {0}")]
    Lower(#[from] LowerError),
    #[error("derivative evaluation failed: {0}")]
    Ad(#[from] AdError),
    #[error("sensitivity assembly failed: {0}")]
    Sensitivity(#[from] SensitivityError),
    #[error("adjoint solve failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("adjoint residual {residual:.3e} exceeds bound {bound:.3e}")]
    AdjointResidual { residual: f64, bound: f64 },
    #[error("dimension mismatch: {0}")]
    BadInput(String),
}

/// Multipliers of the complementarity reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpccMultipliers {
    /// Upper inequality multipliers, carried through from the solver.
    pub mu: Vec<f64>,
    /// Free multipliers on the lower stationarity equations, length `m`.
    pub nu: Vec<f64>,
    /// Multipliers on `g <= 0`, length `s`.
    pub pi: Vec<f64>,
    /// Multipliers on `lambda >= 0`, length `s`.
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SStationary,
    Violated,
    Degenerate,
}

/// Index partition of the lower constraints at the solution.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    /// Strictly active: `g_i = 0`, `lambda_i > 0`.
    pub i_plus: Vec<usize>,
    /// Inactive: `g_i < 0`, `lambda_i = 0`.
    pub i_minus: Vec<usize>,
    /// Biactive: `g_i = 0`, `lambda_i = 0`.
    pub i_zero: Vec<usize>,
}

/// Infinity norms of the three stationarity blocks of the reformulated
/// Lagrangian (in `x`, `y` and `lambda`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityResiduals {
    pub x_block: f64,
    pub y_block: f64,
    pub lambda_block: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SStationarityReport {
    pub verdict: Verdict,
    pub residuals: StationarityResiduals,
    pub index_sets: IndexSets,
    /// Strict sign convention per lower constraint (diagnostic only):
    /// nonnegative `pi` on active, nonnegative `xi` on inactive indices.
    pub sign_rule_ok: Vec<bool>,
    /// Human-readable findings (degeneracy causes, violated checks).
    pub notes: Vec<String>,
}

/// Certificate bundle attached to solver output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub multipliers: Option<MpccMultipliers>,
    pub report: SStationarityReport,
}

fn degenerate_report(index_sets: IndexSets, note: String) -> SStationarityReport {
    SStationarityReport {
        verdict: Verdict::Degenerate,
        residuals: StationarityResiduals {
            x_block: f64::NAN,
            y_block: f64::NAN,
            lambda_block: f64::NAN,
        },
        index_sets,
        sign_rule_ok: Vec::new(),
        notes: vec![note],
    }
}

/// Solves the adjoint system on the transposed sensitivity matrix.
///
/// Returns `(nu, w)` with `nu` of length `m` and `w` of length `|A|`.
pub fn solve_adjoint(
    p: &BilevelProblem,
    x: &[f64],
    sol: &LowerSolution,
    mu: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), StationarityError> {
    if mu.len() != p.upper_constraints.len() {
        return Err(StationarityError::BadInput(format!(
            "mu has length {}, expected {}",
            mu.len(),
            p.upper_constraints.len()
        )));
    }
    let sys = assemble_system(p, x, sol)?;
    let m = p.m;
    let a = sys.active.len();

    let mut top = p.upper_objective.gradient(x, &sol.y, Wrt::Y)?;
    for (gf, &mi) in p.upper_constraints.iter().zip(mu) {
        if mi != 0.0 {
            let gy = gf.gradient(x, &sol.y, Wrt::Y)?;
            for (t, gyi) in top.iter_mut().zip(&gy) {
                *t += mi * gyi;
            }
        }
    }
    let mut rhs = vec![0.0; m + a];
    for (r, t) in rhs.iter_mut().zip(&top) {
        *r = -t;
    }

    let lu = Lu::factor(&sys.m_mat, PIVOT_THRESHOLD)?;
    let z = lu.solve_transposed(&rhs)?;

    let mt = sys.m_mat.transpose();
    let residual_vec: Vec<f64> = mt.matvec(&z).iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let residual = norm_inf(&residual_vec);
    let bound = RESIDUAL_BOUND * (1.0 + norm_inf(&rhs));
    if residual > bound {
        return Err(StationarityError::AdjointResidual { residual, bound });
    }
    Ok((z[..m].to_vec(), z[m..].to_vec()))
}

/// Recovers the reformulation multipliers from the adjoint solution.
pub fn recover_multipliers(
    p: &BilevelProblem,
    x: &[f64],
    sol: &LowerSolution,
    mu: &[f64],
    nu: &[f64],
    w: &[f64],
) -> Result<MpccMultipliers, StationarityError> {
    let s = p.lower_constraints.len();
    if w.len() != sol.active_set.len() {
        return Err(StationarityError::BadInput(format!(
            "w has length {}, expected {}",
            w.len(),
            sol.active_set.len()
        )));
    }
    let mut pi = vec![0.0; s];
    for (&idx, &wi) in sol.active_set.iter().zip(w) {
        pi[idx] = sol.lambda[idx] * wi;
    }
    let jac_y = jacobian(&p.lower_constraints, x, &sol.y, Wrt::Y)?;
    let xi = jac_y.matvec(nu);
    Ok(MpccMultipliers {
        mu: mu.to_vec(),
        nu: nu.to_vec(),
        pi,
        xi,
    })
}

/// Evaluates the stationarity residuals and sign rules at `(x, sol)` for
/// the given multipliers. Index classification uses the active-set
/// tolerances of the default lower-solver configuration.
pub fn check_s_stationarity(
    p: &BilevelProblem,
    x: &[f64],
    sol: &LowerSolution,
    mults: &MpccMultipliers,
    cert_tol: f64,
) -> Result<SStationarityReport, StationarityError> {
    let (n, m) = (p.n, p.m);
    let s = p.lower_constraints.len();
    let y = &sol.y;
    let info = detect_active_set(p, x, y, &sol.lambda, &LowerSolverConfig::default())?;
    let active: Vec<usize> = info.active.clone();
    let biactive: Vec<usize> = info.biactive.clone();
    let inactive: Vec<usize> = (0..s)
        .filter(|i| !active.contains(i) && !biactive.contains(i))
        .collect();
    let index_sets = IndexSets {
        i_plus: active.clone(),
        i_minus: inactive.clone(),
        i_zero: biactive.clone(),
    };

    let mut notes = Vec::new();

    // Stationarity blocks of the reformulated Lagrangian.
    let mut x_block = p.upper_objective.gradient(x, y, Wrt::X)?;
    let mut y_block = p.upper_objective.gradient(x, y, Wrt::Y)?;
    let mut g_upper = Vec::with_capacity(p.upper_constraints.len());
    for (gf, &mi) in p.upper_constraints.iter().zip(&mults.mu) {
        g_upper.push(gf.value(x, y)?);
        if mi != 0.0 {
            let gx = gf.gradient(x, y, Wrt::X)?;
            let gy = gf.gradient(x, y, Wrt::Y)?;
            for (b, v) in x_block.iter_mut().zip(&gx) {
                *b += mi * v;
            }
            for (b, v) in y_block.iter_mut().zip(&gy) {
                *b += mi * v;
            }
        }
    }

    // Lagrangian curvature terms: H nu into the y-block, cross^T nu into
    // the x-block, where H and the cross block include lambda-weighted
    // constraint curvature.
    let mut h_l = p.lower_objective.hessian(x, y, (Wrt::Y, Wrt::Y))?;
    let mut cross = p.lower_objective.hessian(x, y, (Wrt::Y, Wrt::X))?;
    for (i, gf) in p.lower_constraints.iter().enumerate() {
        let li = sol.lambda[i];
        if li != 0.0 {
            let hy = gf.hessian(x, y, (Wrt::Y, Wrt::Y))?;
            let hyx = gf.hessian(x, y, (Wrt::Y, Wrt::X))?;
            for r in 0..m {
                for c in 0..m {
                    h_l[(r, c)] += li * hy[(r, c)];
                }
                for c in 0..n {
                    cross[(r, c)] += li * hyx[(r, c)];
                }
            }
        }
    }
    for r in 0..m {
        let nur = mults.nu[r];
        if nur != 0.0 {
            for c in 0..n {
                x_block[c] += cross[(r, c)] * nur;
            }
            for c in 0..m {
                y_block[c] += h_l[(r, c)] * nur;
            }
        }
    }

    let jac_x = jacobian(&p.lower_constraints, x, y, Wrt::X)?;
    let jac_y = jacobian(&p.lower_constraints, x, y, Wrt::Y)?;
    let mut g_lower = Vec::with_capacity(s);
    for gf in &p.lower_constraints {
        g_lower.push(gf.value(x, y)?);
    }
    for i in 0..s {
        let pi_i = mults.pi[i];
        if pi_i != 0.0 {
            for c in 0..n {
                x_block[c] += pi_i * jac_x[(i, c)];
            }
            for c in 0..m {
                y_block[c] += pi_i * jac_y[(i, c)];
            }
        }
    }
    let lambda_block_vec: Vec<f64> = jac_y
        .matvec(&mults.nu)
        .iter()
        .zip(&mults.xi)
        .map(|(a, b)| a - b)
        .collect();
    let residuals = StationarityResiduals {
        x_block: norm_inf(&x_block),
        y_block: norm_inf(&y_block),
        lambda_block: norm_inf(&lambda_block_vec),
    };

    // Primal feasibility of the reformulation.
    let mut grad_lf = p.lower_objective.gradient(x, y, Wrt::Y)?;
    for i in 0..s {
        let li = sol.lambda[i];
        if li != 0.0 {
            for c in 0..m {
                grad_lf[c] += li * jac_y[(i, c)];
            }
        }
    }
    let mut primal_ok = true;
    if g_upper.iter().any(|&v| v > cert_tol) {
        primal_ok = false;
        notes.push("upper constraint violated".into());
    }
    if norm_inf(&grad_lf) > cert_tol {
        primal_ok = false;
        notes.push("lower stationarity violated".into());
    }
    if g_lower.iter().any(|&v| v > cert_tol) {
        primal_ok = false;
        notes.push("lower constraint violated".into());
    }
    if sol.lambda.iter().any(|&v| v < -cert_tol) {
        primal_ok = false;
        notes.push("negative lower multiplier".into());
    }
    if g_lower
        .iter()
        .zip(&sol.lambda)
        .any(|(&gi, &li)| (gi * li).abs() > cert_tol)
    {
        primal_ok = false;
        notes.push("lower complementarity violated".into());
    }

    // Dual feasibility and complementarity of the upper multipliers.
    let mut dual_ok = true;
    if mults.mu.iter().any(|&v| v < -cert_tol) {
        dual_ok = false;
        notes.push("negative upper multiplier".into());
    }
    if g_upper
        .iter()
        .zip(&mults.mu)
        .any(|(&gi, &mi)| (gi * mi).abs() > cert_tol)
    {
        dual_ok = false;
        notes.push("upper complementarity violated".into());
    }

    // Classical sign rules gate the verdict; the strict all-nonnegative
    // convention is recorded per index.
    let mut classical_ok = true;
    let mut sign_rule_ok = vec![true; s];
    for &i in &active {
        sign_rule_ok[i] = mults.pi[i] >= -cert_tol && mults.xi[i].abs() <= cert_tol;
        if mults.xi[i].abs() > cert_tol {
            classical_ok = false;
            notes.push(format!("xi[{i}] nonzero on a strictly active index"));
        }
    }
    for &i in &inactive {
        sign_rule_ok[i] = mults.pi[i].abs() <= cert_tol && mults.xi[i] >= -cert_tol;
        if mults.pi[i].abs() > cert_tol {
            classical_ok = false;
            notes.push(format!("pi[{i}] nonzero on an inactive index"));
        }
    }
    for &i in &biactive {
        sign_rule_ok[i] = mults.pi[i] >= -cert_tol && mults.xi[i] >= -cert_tol;
    }
    if sign_rule_ok.iter().any(|ok| !ok) {
        notes.push("strict sign convention violated on flagged indices".into());
    }

    let verdict = if !biactive.is_empty() {
        notes.push("biactive lower constraints; sensitivity is one-sided".into());
        Verdict::Degenerate
    } else if residuals.x_block <= cert_tol
        && residuals.y_block <= cert_tol
        && residuals.lambda_block <= cert_tol
        && primal_ok
        && dual_ok
        && classical_ok
    {
        Verdict::SStationary
    } else {
        Verdict::Violated
    };

    Ok(SStationarityReport {
        verdict,
        residuals,
        index_sets,
        sign_rule_ok,
        notes,
    })
}

/// Full certificate pipeline at an upper point `x` with multipliers `mu`:
/// re-solves the lower level cold, solves the adjoint system, recovers
/// multipliers and checks stationarity. Structural breakdowns (unconverged
/// or biactive lower solutions, singular sensitivity matrix) yield a
/// `Degenerate` verdict rather than an error.
pub fn certify(
    p: &BilevelProblem,
    x: &[f64],
    mu: &[f64],
    lower_cfg: &LowerSolverConfig,
    cert_tol: f64,
) -> Result<Certificate, StationarityError> {
    let p = y_boxes_to_constraints(p);
    let sol = solve_lower(&p, x, None, lower_cfg)?;
    if sol.status != LowerStatus::Converged {
        return Ok(Certificate {
            multipliers: None,
            report: degenerate_report(
                IndexSets::default(),
                format!("lower level is {:?} at the certified point", sol.status),
            ),
        });
    }
    let (nu, w) = match solve_adjoint(&p, x, &sol, mu) {
        Ok(ok) => ok,
        Err(StationarityError::Sensitivity(e)) => {
            return Ok(Certificate {
                multipliers: None,
                report: degenerate_report(IndexSets::default(), e.to_string()),
            });
        }
        Err(StationarityError::Linalg(e)) => {
            return Ok(Certificate {
                multipliers: None,
                report: degenerate_report(IndexSets::default(), e.to_string()),
            });
        }
        Err(e) => return Err(e),
    };
    let mults = recover_multipliers(&p, x, &sol, mu, &nu, &w)?;
    let report = check_s_stationarity(&p, x, &sol, &mults, cert_tol)?;
    Ok(Certificate {
        multipliers: Some(mults),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

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

    fn clark_solution(x: f64) -> LowerSolution {
        solve_lower(&clark(), &[x], None, &LowerSolverConfig::default()).unwrap()
    }

    #[test]
    fn adjoint_matches_hand_solution_at_optimum() {
        // At (x, y, lambda) = (1, 3, 4): M = [[2, 1], [4, 0]],
        // rhs = -[grad_y F; 0] = [-2, 0], so M^T [nu; w] = rhs gives
        // nu = 0, w = -0.5.
        let p = clark();
        let sol = clark_solution(1.0);
        let (nu, w) = solve_adjoint(&p, &[1.0], &sol, &[]).unwrap();
        assert_relative_eq!(nu[0], 0.0, epsilon = 1e-8);
        assert_relative_eq!(w[0], -0.5, epsilon = 1e-8);
    }

    #[test]
    fn recovered_multipliers_at_clark_optimum() {
        let p = clark();
        let sol = clark_solution(1.0);
        let (nu, w) = solve_adjoint(&p, &[1.0], &sol, &[]).unwrap();
        let mults = recover_multipliers(&p, &[1.0], &sol, &[], &nu, &w).unwrap();
        // pi on the single active constraint is lambda * w = 4 * (-0.5).
        assert_relative_eq!(mults.pi[0], -2.0, epsilon = 1e-7);
        assert_relative_eq!(mults.pi[1], 0.0);
        assert_relative_eq!(mults.pi[2], 0.0);
        // xi = grad_y g * nu vanishes with nu = 0.
        for &v in &mults.xi {
            assert_relative_eq!(v, 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn clark_optimum_is_s_stationary_with_strict_flag_raised() {
        let p = clark();
        let sol = clark_solution(1.0);
        let (nu, w) = solve_adjoint(&p, &[1.0], &sol, &[]).unwrap();
        let mults = recover_multipliers(&p, &[1.0], &sol, &[], &nu, &w).unwrap();
        let rep = check_s_stationarity(&p, &[1.0], &sol, &mults, CERT_TOL).unwrap();
        assert_eq!(rep.verdict, Verdict::SStationary);
        assert!(rep.residuals.x_block <= 1e-6, "{:?}", rep.residuals);
        assert!(rep.residuals.y_block <= 1e-6);
        assert!(rep.residuals.lambda_block <= 1e-10);
        assert_eq!(rep.index_sets.i_plus, vec![0]);
        assert_eq!(rep.index_sets.i_zero, Vec::<usize>::new());
        // Negative pi on the active index violates the strict convention.
        assert!(!rep.sign_rule_ok[0]);
        assert!(rep.sign_rule_ok[1] && rep.sign_rule_ok[2]);
    }

    #[test]
    fn off_optimum_point_is_violated() {
        // x = 2.5 is feasible but not stationary (the implicit objective
        // has slope -1 there), so the x-block cannot vanish.
        let p = clark();
        let cert = certify(&p, &[2.5], &[], &LowerSolverConfig::default(), CERT_TOL).unwrap();
        assert_eq!(cert.report.verdict, Verdict::Violated);
        assert!(cert.report.residuals.x_block > 1e-2);
    }

    #[test]
    fn zero_adjoint_gives_zero_multipliers() {
        // Lower objective independent of F's y-slope at the solved point:
        // F has no y dependence, so the adjoint rhs vanishes.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, _y| (x[0] - 1.0).powi(2))
            .lower_objective(|x, y| (y[0] - x[0]).powi(2))
            .build()
            .unwrap();
        let sol = solve_lower(&p, &[0.7], None, &LowerSolverConfig::default()).unwrap();
        let (nu, w) = solve_adjoint(&p, &[0.7], &sol, &[]).unwrap();
        assert!(w.is_empty());
        assert_relative_eq!(nu[0], 0.0, epsilon = 1e-10);
        let mults = recover_multipliers(&p, &[0.7], &sol, &[], &nu, &w).unwrap();
        assert!(mults.pi.is_empty());
        assert!(mults.xi.is_empty());
    }

    #[test]
    fn unconstrained_lower_adjoint_is_newton_step() {
        // With no lower constraints, M = H and nu = -H^{-1} grad_y F.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|_x, y| 3.0 * y[0])
            .lower_objective(|x, y| 2.0 * (y[0] - x[0]).powi(2))
            .build()
            .unwrap();
        let sol = solve_lower(&p, &[0.5], None, &LowerSolverConfig::default()).unwrap();
        let (nu, _w) = solve_adjoint(&p, &[0.5], &sol, &[]).unwrap();
        // H = 4, grad_y F = 3 -> nu = -0.75.
        assert_relative_eq!(nu[0], -0.75, epsilon = 1e-9);
    }

    #[test]
    fn certificate_round_trips_through_json() {
        let p = clark();
        let cert = certify(&p, &[1.0], &[], &LowerSolverConfig::default(), CERT_TOL).unwrap();
        let text = serde_json::to_string(&cert).unwrap();
        let back: Certificate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cert);
    }

    #[test]
    fn biactive_point_is_degenerate() {
        // min_y y^2 s.t. -y <= 0 has solution y = 0 with the constraint
        // biactive (g = 0, lambda = 0); the certificate must refuse to
        // classify such a point.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, y| x[0] * x[0] + y[0])
            .lower_objective(|_x, y| y[0] * y[0])
            .lower_constraint(|_x, y| -y[0])
            .build()
            .unwrap();
        let cert = certify(&p, &[0.3], &[], &LowerSolverConfig::default(), CERT_TOL).unwrap();
        assert_eq!(cert.report.verdict, Verdict::Degenerate);
    }

    #[test]
    fn exact_biactive_index_sets_force_degenerate_verdict() {
        // Hand-built exactly biactive solution: the index partition alone
        // must force the degenerate verdict, whatever the multipliers.
        let p = BilevelProblem::builder(1, 1)
            .upper_objective(|x, y| x[0] * x[0] + y[0])
            .lower_objective(|_x, y| y[0] * y[0])
            .lower_constraint(|_x, y| -y[0])
            .build()
            .unwrap();
        let sol = LowerSolution {
            y: vec![0.0],
            lambda: vec![0.0],
            active_set: vec![],
            kkt_residual: 0.0,
            status: LowerStatus::Converged,
            iterations: 0,
        };
        let mults = MpccMultipliers {
            mu: vec![],
            nu: vec![0.0],
            pi: vec![0.0],
            xi: vec![0.0],
        };
        let rep = check_s_stationarity(&p, &[0.3], &sol, &mults, CERT_TOL).unwrap();
        assert_eq!(rep.verdict, Verdict::Degenerate);
        assert_eq!(rep.index_sets.i_zero, vec![0]);
    }
}
