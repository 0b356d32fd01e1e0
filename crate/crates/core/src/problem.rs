//! Problem container and structural transformations.
//!
//! A [`BilevelProblem`] stores the optimistic bilevel program
//!
//! ```text
//! min_x  F(x, y)   s.t.  G(x, y) <= 0,  x in [x_lo, x_hi]
//! where  y solves  min_y f(x, y)  s.t.  g(x, y) <= 0,  y in [y_lo, y_hi]
//! ```
//!
//! The solver pipeline keeps x-boxes native (the inner solver projects onto
//! them) and converts y-boxes into lower-level inequalities, because the
//! lower solver is a general inequality-constrained solver with no special
//! bound handling.

use thiserror::Error;

use crate::autodiff::{Function, Jet2};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("bounds vector for {which} has length {got}, expected {expected}")]
    BoundsLength {
        which: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("missing {0} objective")]
    MissingObjective(&'static str),
    #[error("regularization weight must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("function arity {got:?} does not match problem dimensions {expected:?}")]
    ArityMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
}

/// Optimistic bilevel program with smooth data.
#[derive(Debug, Clone)]
pub struct BilevelProblem {
    pub n: usize,
    pub m: usize,
    pub upper_objective: Function,
    pub upper_constraints: Vec<Function>,
    pub lower_objective: Function,
    pub lower_constraints: Vec<Function>,
    /// Per-coordinate `(lo, hi)`; infinities mean unbounded.
    pub x_bounds: Vec<(f64, f64)>,
    pub y_bounds: Vec<(f64, f64)>,
}

impl BilevelProblem {
    pub fn builder(n: usize, m: usize) -> Builder {
        Builder::new(n, m)
    }

    pub fn num_upper_constraints(&self) -> usize {
        self.upper_constraints.len()
    }

    pub fn num_lower_constraints(&self) -> usize {
        self.lower_constraints.len()
    }

    /// Projects a point onto the x-box.
    pub fn project_x(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.x_bounds)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect()
    }

    fn check_arity(&self, f: &Function) -> Result<(), ProblemError> {
        if f.arity() != (self.n, self.m) {
            return Err(ProblemError::ArityMismatch {
                got: f.arity(),
                expected: (self.n, self.m),
            });
        }
        Ok(())
    }
}

pub struct Builder {
    n: usize,
    m: usize,
    upper_objective: Option<Function>,
    upper_constraints: Vec<Function>,
    lower_objective: Option<Function>,
    lower_constraints: Vec<Function>,
    x_bounds: Option<Vec<(f64, f64)>>,
    y_bounds: Option<Vec<(f64, f64)>>,
}

impl Builder {
    fn new(n: usize, m: usize) -> Self {
        Builder {
            n,
            m,
            upper_objective: None,
            upper_constraints: Vec::new(),
            lower_objective: None,
            lower_constraints: Vec::new(),
            x_bounds: None,
            y_bounds: None,
        }
    }

    pub fn upper_objective<F>(mut self, f: F) -> Self
    where
        F: Fn(&[Jet2], &[Jet2]) -> Jet2 + Send + Sync + 'static,
    {
        self.upper_objective = Some(Function::new(self.n, self.m, f));
        self
    }

    pub fn upper_constraint<F>(mut self, f: F) -> Self
    where
        F: Fn(&[Jet2], &[Jet2]) -> Jet2 + Send + Sync + 'static,
    {
        self.upper_constraints
            .push(Function::new(self.n, self.m, f));
        self
    }

    pub fn lower_objective<F>(mut self, f: F) -> Self
    where
        F: Fn(&[Jet2], &[Jet2]) -> Jet2 + Send + Sync + 'static,
    {
        self.lower_objective = Some(Function::new(self.n, self.m, f));
        self
    }

    pub fn lower_constraint<F>(mut self, f: F) -> Self
    where
        F: Fn(&[Jet2], &[Jet2]) -> Jet2 + Send + Sync + 'static,
    {
        self.lower_constraints
            .push(Function::new(self.n, self.m, f));
        self
    }

    pub fn x_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.x_bounds = Some(bounds);
        self
    }

    pub fn y_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.y_bounds = Some(bounds);
        self
    }

    pub fn build(self) -> Result<BilevelProblem, ProblemError> {
        let x_bounds = self
            .x_bounds
            .unwrap_or_else(|| vec![(f64::NEG_INFINITY, f64::INFINITY); self.n]);
        if x_bounds.len() != self.n {
            return Err(ProblemError::BoundsLength {
                which: "x",
                got: x_bounds.len(),
                expected: self.n,
            });
        }
        let y_bounds = self
            .y_bounds
            .unwrap_or_else(|| vec![(f64::NEG_INFINITY, f64::INFINITY); self.m]);
        if y_bounds.len() != self.m {
            return Err(ProblemError::BoundsLength {
                which: "y",
                got: y_bounds.len(),
                expected: self.m,
            });
        }
        Ok(BilevelProblem {
            n: self.n,
            m: self.m,
            upper_objective: self
                .upper_objective
                .ok_or(ProblemError::MissingObjective("upper"))?,
            upper_constraints: self.upper_constraints,
            lower_objective: self
                .lower_objective
                .ok_or(ProblemError::MissingObjective("lower"))?,
            lower_constraints: self.lower_constraints,
            x_bounds,
            y_bounds,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Info,
}

#[derive(Debug, Clone)]
pub struct ValidationIssue {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    fn error(&mut self, message: String) {
        self.issues.push(ValidationIssue {
            severity: Severity::Error,
            message,
        });
    }

    fn info(&mut self, message: String) {
        self.issues.push(ValidationIssue {
            severity: Severity::Info,
            message,
        });
    }
}

/// Structural checks: dimensions, function arities, bound ordering.
/// Empty constraint lists are legal and reported informationally.
pub fn validate(p: &BilevelProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    if p.n == 0 {
        report.error("upper dimension n must be at least 1".into());
    }
    if p.m == 0 {
        report.error("lower dimension m must be at least 1".into());
    }
    for (label, f) in [("F", &p.upper_objective), ("f", &p.lower_objective)] {
        if p.check_arity(f).is_err() {
            report.error(format!(
                "objective {label} has arity {:?}, expected ({}, {})",
                f.arity(),
                p.n,
                p.m
            ));
        }
    }
    for (label, fs) in [("G", &p.upper_constraints), ("g", &p.lower_constraints)] {
        for (i, f) in fs.iter().enumerate() {
            if p.check_arity(f).is_err() {
                report.error(format!(
                    "constraint {label}[{i}] has arity {:?}, expected ({}, {})",
                    f.arity(),
                    p.n,
                    p.m
                ));
            }
        }
        if fs.is_empty() {
            report.info(format!("constraint block {label} is empty"));
        }
    }
    for (label, bounds, dim) in [("x", &p.x_bounds, p.n), ("y", &p.y_bounds, p.m)] {
        if bounds.len() != dim {
            report.error(format!(
                "{label}-bounds length {} does not match dimension {dim}",
                bounds.len()
            ));
            continue;
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if lo > hi {
                report.error(format!("{label}-bound {i} is reversed: [{lo}, {hi}]"));
            }
            if lo.is_nan() || hi.is_nan() {
                report.error(format!("{label}-bound {i} contains NaN"));
            }
        }
    }
    report
}

/// Adds `eps * ||y||^2` to the lower objective.
///
/// Linear lower objectives give a constant KKT Hessian block with no
/// curvature, which leaves the sensitivity system singular off the active
/// set; the quadratic term restores strict convexity without moving the
/// solution by more than O(eps).
pub fn regularize_linear_lower(
    p: &BilevelProblem,
    eps: f64,
) -> Result<BilevelProblem, ProblemError> {
    if !(eps > 0.0) {
        return Err(ProblemError::InvalidEpsilon(eps));
    }
    let inner = p.lower_objective.clone();
    let m = p.m;
    let mut out = p.clone();
    out.lower_objective = Function::new(p.n, p.m, move |x, y| {
        let mut acc = inner.eval_raw(x, y);
        for item in y.iter().take(m) {
            acc = acc + eps * (*item * *item);
        }
        acc
    });
    Ok(out)
}

/// Converts every finite bound into an explicit inequality: x-boxes are
/// appended to the upper constraints, y-boxes to the lower constraints.
/// The returned problem has unbounded boxes.
pub fn boxes_to_constraints(p: &BilevelProblem) -> BilevelProblem {
    let mut out = y_boxes_to_constraints(p);
    for (i, &(lo, hi)) in p.x_bounds.iter().enumerate() {
        if lo.is_finite() {
            out.upper_constraints
                .push(Function::new(p.n, p.m, move |x, _y| lo - x[i]));
        }
        if hi.is_finite() {
            out.upper_constraints
                .push(Function::new(p.n, p.m, move |x, _y| x[i] - hi));
        }
    }
    out.x_bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); p.n];
    out
}

/// Converts only the y-boxes into lower-level inequalities, leaving x-boxes
/// native. This is what the solver pipeline applies before running.
pub fn y_boxes_to_constraints(p: &BilevelProblem) -> BilevelProblem {
    let mut out = p.clone();
    for (i, &(lo, hi)) in p.y_bounds.iter().enumerate() {
        if lo.is_finite() {
            out.lower_constraints
                .push(Function::new(p.n, p.m, move |_x, y| lo - y[i]));
        }
        if hi.is_finite() {
            out.lower_constraints
                .push(Function::new(p.n, p.m, move |_x, y| y[i] - hi));
        }
    }
    out.y_bounds = vec![(f64::NEG_INFINITY, f64::INFINITY); p.m];
    out
}
