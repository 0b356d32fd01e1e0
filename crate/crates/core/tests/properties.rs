//! Randomized invariants: differentiation against finite differences,
//! update-rule algebra, box folding, and solver contracts on families of
//! problems with known closed-form solutions.

use bilevel_core::alm::{dual_update, kkt_residuals, penalty_update};
use bilevel_core::autodiff::{Function, Wrt};
use bilevel_core::inner_solver::{minimize, InnerConfig, InnerStatus};
use bilevel_core::linalg::{Lu, Mat};
use bilevel_core::lower_solver::{solve_lower, LowerSolverConfig, LowerStatus};
use bilevel_core::problem::y_boxes_to_constraints;
use bilevel_core::BilevelProblem;
use proptest::prelude::*;

/// Central finite difference of `f` in the chosen argument block.
fn fd_gradient(f: &Function, x: &[f64], y: &[f64], wrt: Wrt, h: f64) -> Vec<f64> {
    let dim = match wrt {
        Wrt::X => x.len(),
        Wrt::Y => y.len(),
    };
    (0..dim)
        .map(|i| {
            let mut xp = x.to_vec();
            let mut yp = y.to_vec();
            let mut xm = x.to_vec();
            let mut ym = y.to_vec();
            match wrt {
                Wrt::X => {
                    xp[i] += h;
                    xm[i] -= h;
                }
                Wrt::Y => {
                    yp[i] += h;
                    ym[i] -= h;
                }
            }
            (f.value(&xp, &yp).unwrap() - f.value(&xm, &ym).unwrap()) / (2.0 * h)
        })
        .collect()
}

/// Central finite difference of the exact gradient in the second block,
/// giving one column of the `(wrt_a, wrt_b)` Hessian at a time.
fn fd_hessian(f: &Function, x: &[f64], y: &[f64], wrt: (Wrt, Wrt), h: f64) -> Vec<Vec<f64>> {
    let cols = match wrt.1 {
        Wrt::X => x.len(),
        Wrt::Y => y.len(),
    };
    let rows = match wrt.0 {
        Wrt::X => x.len(),
        Wrt::Y => y.len(),
    };
    let mut out = vec![vec![0.0; cols]; rows];
    for j in 0..cols {
        let mut xp = x.to_vec();
        let mut yp = y.to_vec();
        let mut xm = x.to_vec();
        let mut ym = y.to_vec();
        match wrt.1 {
            Wrt::X => {
                xp[j] += h;
                xm[j] -= h;
            }
            Wrt::Y => {
                yp[j] += h;
                ym[j] -= h;
            }
        }
        let gp = f.gradient(&xp, &yp, wrt.0).unwrap();
        let gm = f.gradient(&xm, &ym, wrt.0).unwrap();
        for i in 0..rows {
            out[i][j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    out
}

/// Smooth test function with randomized coefficients covering products,
/// powers, trigonometry, exponentials and logarithms of both blocks.
fn random_function(a: Vec<f64>) -> Function {
    Function::new(2, 2, move |x, y| {
        a[0] * x[0].powi(2) * y[0]
            + a[1] * x[1].sin() * y[1].powi(2)
            + a[2] * (0.3 * x[0] * y[1]).exp()
            + a[3] * x[1].powi(3)
            + a[4] * x[0] * y[0] * y[1]
            + a[5] * (x[0] * x[0] + 1.0).ln()
    })
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 6)
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 4)
}

proptest! {
    #[test]
    fn gradients_match_finite_differences(a in coeffs(), p in point()) {
        let f = random_function(a);
        let (x, y) = p.split_at(2);
        for wrt in [Wrt::X, Wrt::Y] {
            let exact = f.gradient(x, y, wrt).unwrap();
            let approx = fd_gradient(&f, x, y, wrt, 1e-5);
            for (e, fd) in exact.iter().zip(&approx) {
                prop_assert!((e - fd).abs() <= 1e-6 * (1.0 + e.abs()),
                    "gradient mismatch: exact {e}, fd {fd}");
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences(a in coeffs(), p in point()) {
        let f = random_function(a);
        let (x, y) = p.split_at(2);
        for wrt in [(Wrt::X, Wrt::X), (Wrt::Y, Wrt::Y), (Wrt::X, Wrt::Y), (Wrt::Y, Wrt::X)] {
            let exact = f.hessian(x, y, wrt).unwrap();
            let approx = fd_hessian(&f, x, y, wrt, 1e-5);
            for i in 0..exact.rows() {
                for j in 0..exact.cols() {
                    let e = exact[(i, j)];
                    let fd = approx[i][j];
                    prop_assert!((e - fd).abs() <= 2e-5 * (1.0 + e.abs()),
                        "hessian {wrt:?} mismatch at ({i},{j}): exact {e}, fd {fd}");
                }
            }
        }
    }

    #[test]
    fn hessian_blocks_are_symmetric(a in coeffs(), p in point()) {
        let f = random_function(a);
        let (x, y) = p.split_at(2);
        let h_xx = f.hessian(x, y, (Wrt::X, Wrt::X)).unwrap();
        let h_xy = f.hessian(x, y, (Wrt::X, Wrt::Y)).unwrap();
        let h_yx = f.hessian(x, y, (Wrt::Y, Wrt::X)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((h_xx[(i, j)] - h_xx[(j, i)]).abs() <= 1e-12);
                prop_assert!((h_xy[(i, j)] - h_yx[(j, i)]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dual_update_is_the_positive_part_of_the_shifted_multiplier(
        pairs in prop::collection::vec((0.0f64..5.0, -3.0f64..3.0), 0..6),
        rho in 0.1f64..100.0,
    ) {
        let mu: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let next = dual_update(&mu, &g, rho);
        prop_assert_eq!(next.len(), mu.len());
        for ((&ni, &mi), &gi) in next.iter().zip(&mu).zip(&g) {
            prop_assert!(ni >= 0.0);
            prop_assert_eq!(ni, (mi + rho * gi).max(0.0));
        }
    }

    #[test]
    fn penalty_never_decreases_and_fires_exactly_on_the_ratio_test(
        rho in 0.1f64..1e4,
        gamma in 1.5f64..20.0,
        factor in 0.05f64..0.95,
        feas_now in 0.0f64..10.0,
        feas_prev in prop::option::of(0.0f64..10.0),
    ) {
        let (next, fired) = penalty_update(rho, feas_now, feas_prev, gamma, factor);
        prop_assert!(next >= rho);
        match feas_prev {
            None => {
                prop_assert!(!fired);
                prop_assert_eq!(next, rho);
            }
            Some(prev) => {
                let expect_fire = feas_now > factor * prev;
                prop_assert_eq!(fired, expect_fire);
                prop_assert_eq!(next, if expect_fire { rho * gamma } else { rho });
            }
        }
    }

    #[test]
    fn kkt_residuals_are_componentwise_maxima(
        grad in prop::collection::vec(-4.0f64..4.0, 0..5),
        pairs in prop::collection::vec((-3.0f64..3.0, 0.0f64..5.0), 0..5),
    ) {
        let g: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let mu: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let r = kkt_residuals(&grad, &g, &mu);
        let stat = grad.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let feas = g.iter().fold(0.0f64, |a, &v| a.max(v.max(0.0)));
        let comp = g.iter().zip(&mu).fold(0.0f64, |a, (&gi, &mi)| a.max((gi * mi).abs()));
        prop_assert_eq!(r.stationarity, stat);
        prop_assert_eq!(r.feasibility, feas);
        prop_assert_eq!(r.complementarity, comp);
        prop_assert_eq!(r.overall, stat.max(feas).max(comp));
    }
}

fn box_bounds(m: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-2.0f64..-0.1, 0.1f64..2.0), m)
}

/// Trivial problem carrying only y-boxes, used to isolate the folding rule.
fn box_only_problem(m: usize, bounds: Vec<(f64, f64)>) -> BilevelProblem {
    BilevelProblem::builder(1, m)
        .upper_objective(|x, _y| x[0])
        .lower_objective(|_x, y| y[0])
        .y_bounds(bounds)
        .build()
        .unwrap()
}

proptest! {
    #[test]
    fn folded_boxes_agree_with_box_membership(
        bounds in box_bounds(2),
        t in prop::collection::vec(0.05f64..0.95, 2),
        outside_axis in 0usize..2,
        outside_low in any::<bool>(),
        offset in 0.01f64..1.0,
        inside in any::<bool>(),
    ) {
        let p = box_only_problem(2, bounds.clone());
        let folded = y_boxes_to_constraints(&p);
        prop_assert_eq!(folded.lower_constraints.len(), 4);

        let mut y: Vec<f64> = bounds
            .iter()
            .zip(&t)
            .map(|(&(lo, hi), &ti)| lo + ti * (hi - lo))
            .collect();
        if !inside {
            let (lo, hi) = bounds[outside_axis];
            y[outside_axis] = if outside_low { lo - offset } else { hi + offset };
        }
        let worst = folded
            .lower_constraints
            .iter()
            .map(|g| g.value(&[0.0], &y).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        if inside {
            prop_assert!(worst < 0.0, "interior point flagged infeasible: {worst}");
        } else {
            prop_assert!(worst >= offset - 1e-12, "exterior point accepted: {worst}");
        }
    }

    #[test]
    fn projection_clamps_idempotently(
        bounds in box_bounds(3),
        x in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let p = BilevelProblem::builder(3, 1)
            .upper_objective(|x, _y| x[0])
            .lower_objective(|_x, y| y[0])
            .x_bounds(bounds.clone())
            .build()
            .unwrap();
        let proj = p.project_x(&x);
        for ((&pi, &xi), &(lo, hi)) in proj.iter().zip(&x).zip(&bounds) {
            prop_assert!(pi >= lo && pi <= hi);
            prop_assert_eq!(pi, xi.clamp(lo, hi));
        }
        prop_assert_eq!(p.project_x(&proj), proj);
    }
}

/// Strategy for a separable strictly convex quadratic over a box. The
/// centers stay clear of the boundary so the true active set is stable.
#[allow(clippy::type_complexity)]
fn separable_qp(
    dim: usize,
) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<(f64, f64)>, Vec<f64>)> {
    let center = prop_oneof![-2.0f64..-1.01, -0.99f64..0.99, 1.01f64..2.0];
    (
        prop::collection::vec(0.5f64..3.0, dim),
        prop::collection::vec(center, dim),
        prop::collection::vec((Just(-1.0f64), Just(1.0f64)), dim),
        prop::collection::vec(0.1f64..0.9, dim),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inner_solver_finds_clamped_minimizer((d, c, bounds, t0) in separable_qp(3)) {
        let x0: Vec<f64> = bounds
            .iter()
            .zip(&t0)
            .map(|(&(lo, hi), &ti)| lo + ti * (hi - lo))
            .collect();
        let dd = d.clone();
        let cc = c.clone();
        let oracle = move |x: &[f64]| {
            let f = x.iter().zip(&dd).zip(&cc).map(|((&xi, &di), &ci)| di * (xi - ci).powi(2)).sum();
            let g = x.iter().zip(&dd).zip(&cc).map(|((&xi, &di), &ci)| 2.0 * di * (xi - ci)).collect();
            Ok((f, g))
        };
        let cfg = InnerConfig { grad_tol: 1e-8, ..InnerConfig::default() };
        let res = minimize(oracle, &x0, &bounds, &cfg).unwrap();

        prop_assert_eq!(res.status, InnerStatus::Converged);
        for ((&xi, &ci), &(lo, hi)) in res.x.iter().zip(&c).zip(&bounds) {
            prop_assert!(xi >= lo - 1e-12 && xi <= hi + 1e-12);
            prop_assert!((xi - ci.clamp(lo, hi)).abs() <= 1e-6,
                "minimizer off: got {xi}, want {}", ci.clamp(lo, hi));
        }
        for w in res.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()),
                "accepted step increased the objective: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn lower_solver_satisfies_its_contracts_on_box_qps((d, c, _b, _t) in separable_qp(2)) {
        let dd = d.clone();
        let cc = c.clone();
        let p = BilevelProblem::builder(1, 2)
            .upper_objective(|x, _y| x[0])
            .lower_objective(move |_x, y| {
                dd[0] * (y[0] - cc[0]).powi(2) + dd[1] * (y[1] - cc[1]).powi(2)
            })
            .y_bounds(vec![(-1.0, 1.0); 2])
            .build()
            .unwrap();
        let folded = y_boxes_to_constraints(&p);
        let cfg = LowerSolverConfig::default();
        let sol = solve_lower(&folded, &[0.0], None, &cfg).unwrap();

        prop_assert!(
            matches!(sol.status, LowerStatus::Converged | LowerStatus::Degenerate),
            "strictly convex feasible program failed: {:?}", sol.status
        );
        if sol.status == LowerStatus::Converged {
            prop_assert!(sol.kkt_residual <= cfg.kkt_tol);
        }

        // Closed form: each coordinate clamps independently; the active
        // bound carries multiplier 2 d |c - bound|. Row 2i is the lower
        // bound of axis i, row 2i + 1 the upper bound.
        for i in 0..2 {
            let want = c[i].clamp(-1.0, 1.0);
            prop_assert!((sol.y[i] - want).abs() <= 1e-7,
                "primal off on axis {i}: got {}, want {want}", sol.y[i]);
            let want_lo = if c[i] < -1.0 { 2.0 * d[i] * (-1.0 - c[i]) } else { 0.0 };
            let want_hi = if c[i] > 1.0 { 2.0 * d[i] * (c[i] - 1.0) } else { 0.0 };
            prop_assert!((sol.lambda[2 * i] - want_lo).abs() <= 1e-6);
            prop_assert!((sol.lambda[2 * i + 1] - want_hi).abs() <= 1e-6);
        }

        let g: Vec<f64> = folded
            .lower_constraints
            .iter()
            .map(|gf| gf.value(&[0.0], &sol.y).unwrap())
            .collect();
        for (i, (&gi, &li)) in g.iter().zip(&sol.lambda).enumerate() {
            prop_assert!(gi <= cfg.active_tol, "constraint {i} violated: {gi}");
            prop_assert!((gi * li).abs() <= 10.0 * cfg.kkt_tol,
                "complementarity broken on {i}: g {gi}, lambda {li}");
            if sol.active_set.contains(&i) {
                prop_assert!(gi.abs() <= cfg.active_tol && li > cfg.multiplier_tol,
                    "active index {i} fails the classification rule: g {gi}, lambda {li}");
            } else {
                prop_assert!(gi < -cfg.active_tol || li <= cfg.multiplier_tol,
                    "inactive index {i} fails the classification rule: g {gi}, lambda {li}");
            }
        }
    }

    #[test]
    fn lu_solves_diagonally_dominant_systems(
        dim in 1usize..=6,
        seed in prop::collection::vec(-1.0f64..1.0, 49),
    ) {
        let mut a = Mat::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            for j in 0..dim {
                a[(i, j)] = seed[k];
                k += 1;
            }
        }
        for i in 0..dim {
            let rowsum: f64 = (0..dim).map(|j| a[(i, j)].abs()).sum();
            a[(i, i)] += rowsum + 1.0;
        }
        let b: Vec<f64> = seed[36..36 + dim].to_vec();
        let c: Vec<f64> = seed[42..42 + dim].to_vec();

        let lu = Lu::factor(&a, 1e-12).unwrap();
        let x = lu.solve(&b).unwrap();
        let xt = lu.solve_transposed(&c).unwrap();
        for i in 0..dim {
            let ax: f64 = (0..dim).map(|j| a[(i, j)] * x[j]).sum();
            prop_assert!((ax - b[i]).abs() <= 1e-10 * (1.0 + b[i].abs()));
            let atx: f64 = (0..dim).map(|j| a[(j, i)] * xt[j]).sum();
            prop_assert!((atx - c[i]).abs() <= 1e-10 * (1.0 + c[i].abs()));
        }
    }
}
