//! Sensitivity of the lower-level optimum with respect to the upper
//! variables.
//!
//! At a converged, strictly complementary lower solution with active set
//! `A`, differentiating the active KKT conditions in `x` gives the linear
//! system
//!
//! ```text
//! [ H_L           grad_y g_A^T ] [ dy/dx      ]   [ -d2f/dydx_L      ]
//! [ diag(l_A) J_A      0       ] [ dl_A/dx    ] = [ -diag(l_A) dg_A/dx ]
//! ```
//!
//! where `H_L` is the Hessian in `y` of the lower Lagrangian restricted to
//! the active constraints. Solving it column by column yields `dy/dx` and
//! the active multiplier sensitivities; the chain rule then produces total
//! upper-level derivatives through the implicit function `y(x)`.

use thiserror::Error;

use crate::autodiff::{AdError, Wrt};
use crate::linalg::{norm_inf, LinalgError, Lu, Mat};
use crate::lower_solver::{LowerSolution, LowerStatus};
use crate::problem::BilevelProblem;

/// Acceptable relative residual for a sensitivity solve.
pub const RESIDUAL_BOUND: f64 = 1e-10;
/// Relative pivot threshold below which the KKT matrix counts as singular.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("lower solution has status {0:?}; sensitivities need a converged point")]
    NotConverged(LowerStatus),
    #[error("sensitivity system is singular for active set {active:?}: {source}")]
    Singular {
        active: Vec<usize>,
        source: LinalgError,
    },
    #[error("sensitivity solve residual {residual:.3e} exceeds bound {bound:.3e} (column {col})")]
    ResidualTooLarge {
        residual: f64,
        bound: f64,
        col: usize,
    },
    #[error("evaluation failed while assembling sensitivities: {0}")]
    Eval(#[from] AdError),
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

/// Assembled KKT sensitivity system at a converged lower solution.
#[derive(Debug, Clone)]
pub struct SensitivitySystem {
    /// `(m + a) x (m + a)` coefficient matrix.
    pub m_mat: Mat,
    /// `(m + a) x n` right-hand side, one column per upper variable.
    pub rhs: Mat,
    pub active: Vec<usize>,
    pub lambda_active: Vec<f64>,
}

/// Solution of the sensitivity system.
#[derive(Debug, Clone)]
pub struct Sensitivity {
    /// `m x n` Jacobian of the lower optimum.
    pub dy_dx: Mat,
    /// `a x n` Jacobian of the active multipliers, rows ordered like the
    /// active set.
    pub dlambda_dx: Mat,
    /// Hager 1-norm condition estimate of the system matrix (diagnostic).
    pub cond_estimate: f64,
}

/// Total derivatives of the upper-level data through `y(x)`.
#[derive(Debug, Clone)]
pub struct TotalDerivatives {
    /// `dF/dx`, length `n`.
    pub grad_upper: Vec<f64>,
    /// `r x n` Jacobian of the upper constraints.
    pub jac_upper: Mat,
}

/// Builds the sensitivity system at `(x, sol)`.
///
/// Requires `sol.status == Converged`; degenerate points have no unique
/// sensitivity and are rejected.
pub fn assemble_system(
    p: &BilevelProblem,
    x: &[f64],
    sol: &LowerSolution,
) -> Result<SensitivitySystem, SensitivityError> {
    if sol.status != LowerStatus::Converged {
        return Err(SensitivityError::NotConverged(sol.status));
    }
    let m = p.m;
    let n = p.n;
    let y = &sol.y;
    let active = sol.active_set.clone();
    let a = active.len();

    // Lagrangian second-derivative blocks restricted to the active set.
    let mut h_l = p.lower_objective.hessian(x, y, (Wrt::Y, Wrt::Y))?;
    let mut cross = p.lower_objective.hessian(x, y, (Wrt::Y, Wrt::X))?;
    for &i in &active {
        let li = sol.lambda[i];
        let hg = p.lower_constraints[i].hessian(x, y, (Wrt::Y, Wrt::Y))?;
        let cg = p.lower_constraints[i].hessian(x, y, (Wrt::Y, Wrt::X))?;
        for r in 0..m {
            for c in 0..m {
                h_l[(r, c)] += li * hg[(r, c)];
            }
            for c in 0..n {
                cross[(r, c)] += li * cg[(r, c)];
            }
        }
    }

    let dim = m + a;
    let mut m_mat = Mat::zeros(dim, dim);
    let mut rhs = Mat::zeros(dim, n);
    for r in 0..m {
        for c in 0..m {
            m_mat[(r, c)] = h_l[(r, c)];
        }
        for c in 0..n {
            rhs[(r, c)] = -cross[(r, c)];
        }
    }
    let mut lambda_active = Vec::with_capacity(a);
    for (k, &i) in active.iter().enumerate() {
        let li = sol.lambda[i];
        lambda_active.push(li);
        let gy = p.lower_constraints[i].gradient(x, y, Wrt::Y)?;
        let gx = p.lower_constraints[i].gradient(x, y, Wrt::X)?;
        for r in 0..m {
            m_mat[(r, m + k)] = gy[r];
            m_mat[(m + k, r)] = li * gy[r];
        }
        for c in 0..n {
            rhs[(m + k, c)] = -li * gx[c];
        }
    }

    Ok(SensitivitySystem {
        m_mat,
        rhs,
        active,
        lambda_active,
    })
}

/// Solves the assembled system column by column.
///
/// Each solve is verified against the residual bound
/// `RESIDUAL_BOUND * (1 + ||b||_inf)`; the condition estimate is attached
/// for diagnostics and never rejects a solve on its own.
pub fn solve_system(sys: &SensitivitySystem) -> Result<Sensitivity, SensitivityError> {
    let dim = sys.m_mat.rows();
    let a = sys.active.len();
    let m = dim - a;
    let n = sys.rhs.cols();

    let lu =
        Lu::factor(&sys.m_mat, PIVOT_THRESHOLD).map_err(|source| SensitivityError::Singular {
            active: sys.active.clone(),
            source,
        })?;
    let cond_estimate = lu.cond_one_estimate(sys.m_mat.norm_one());

    let mut dy_dx = Mat::zeros(m, n);
    let mut dlambda_dx = Mat::zeros(a, n);
    for col in 0..n {
        let b: Vec<f64> = (0..dim).map(|r| sys.rhs[(r, col)]).collect();
        let z = lu.solve(&b)?;
        let mz = sys.m_mat.matvec(&z);
        let residual = norm_inf(&mz.iter().zip(&b).map(|(u, v)| u - v).collect::<Vec<f64>>());
        let bound = RESIDUAL_BOUND * (1.0 + norm_inf(&b));
        if residual > bound {
            return Err(SensitivityError::ResidualTooLarge {
                residual,
                bound,
                col,
            });
        }
        for r in 0..m {
            dy_dx[(r, col)] = z[r];
        }
        for r in 0..a {
            dlambda_dx[(r, col)] = z[m + r];
        }
    }

    Ok(Sensitivity {
        dy_dx,
        dlambda_dx,
        cond_estimate,
    })
}

/// Chain rule for the upper objective and constraints:
/// `dF/dx = grad_x F + (dy/dx)^T grad_y F`, one row of the same shape per
/// upper constraint.
pub fn total_gradients(
    p: &BilevelProblem,
    x: &[f64],
    sol: &LowerSolution,
    sens: &Sensitivity,
) -> Result<TotalDerivatives, SensitivityError> {
    let n = p.n;
    let y = &sol.y;

    let total_of = |f: &crate::autodiff::Function| -> Result<Vec<f64>, SensitivityError> {
        let gx = f.gradient(x, y, Wrt::X)?;
        let gy = f.gradient(x, y, Wrt::Y)?;
        let mut out = gx;
        for (c, oc) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (r, gyr) in gy.iter().enumerate() {
                acc += sens.dy_dx[(r, c)] * gyr;
            }
            *oc += acc;
        }
        Ok(out)
    };

    let grad_upper = total_of(&p.upper_objective)?;
    let r = p.upper_constraints.len();
    let mut jac_upper = Mat::zeros(r, n);
    for (i, gf) in p.upper_constraints.iter().enumerate() {
        let row = total_of(gf)?;
        for c in 0..n {
            jac_upper[(i, c)] = row[c];
        }
    }
    Ok(TotalDerivatives {
        grad_upper,
        jac_upper,
    })
}
