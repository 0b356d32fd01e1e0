//! Forward-mode automatic differentiation with value, gradient and Hessian
//! channels.
//!
//! A [`Jet2`] carries a scalar value together with first and second
//! derivatives with respect to up to [`MAX_VARS`] seeded directions. Every
//! arithmetic operation propagates all three channels, so a single
//! evaluation of a function written against jets yields exact derivatives
//! up to second order. Unseeded directions hold zeros and propagate zeros;
//! there is no runtime flag distinguishing them.
//!
//! Problem functions take the upper variables `x` (seeded at indices
//! `0..n`) and the lower variables `y` (seeded at `n..n+m`). Which block is
//! actually seeded depends on the derivative being requested; the other
//! block rides along as constants.

use std::sync::Arc;

use thiserror::Error;

use crate::linalg::Mat;

/// Maximum number of simultaneously seeded directions (`n + m`).
pub const MAX_VARS: usize = 8;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("function evaluation produced a non-finite {channel} at {location}")]
    NotFinite { channel: String, location: String },
    #[error(
        "dimension mismatch: expected x of length {n} and y of length {m}, got {got_x} and {got_y}"
    )]
    DimensionMismatch {
        n: usize,
        m: usize,
        got_x: usize,
        got_y: usize,
    },
}

/// Second-order jet: value, gradient and Hessian with respect to the seeded
/// directions.
#[derive(Debug, Clone, Copy)]
pub struct Jet2 {
    val: f64,
    grad: [f64; MAX_VARS],
    hess: [[f64; MAX_VARS]; MAX_VARS],
}

impl Jet2 {
    pub fn constant(val: f64) -> Self {
        Jet2 {
            val,
            grad: [0.0; MAX_VARS],
            hess: [[0.0; MAX_VARS]; MAX_VARS],
        }
    }

    /// A variable seeded in direction `index`.
    pub fn variable(val: f64, index: usize) -> Self {
        assert!(index < MAX_VARS, "seed index {index} out of range");
        let mut jet = Jet2::constant(val);
        jet.grad[index] = 1.0;
        jet
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn deriv(&self, i: usize) -> f64 {
        self.grad[i]
    }

    pub fn second_deriv(&self, i: usize, j: usize) -> f64 {
        self.hess[i][j]
    }

    /// Applies a scalar function through the chain rule.
    ///
    /// `f`, `df`, `ddf` are the function and its first two derivatives
    /// evaluated at the current value.
    fn unary(&self, f: f64, df: f64, ddf: f64) -> Jet2 {
        let mut out = Jet2::constant(f);
        for i in 0..MAX_VARS {
            out.grad[i] = df * self.grad[i];
        }
        for i in 0..MAX_VARS {
            for j in 0..MAX_VARS {
                out.hess[i][j] = df * self.hess[i][j] + ddf * self.grad[i] * self.grad[j];
            }
        }
        out
    }

    pub fn powi(&self, k: i32) -> Jet2 {
        let v = self.val;
        match k {
            0 => Jet2::constant(1.0),
            1 => *self,
            _ => {
                let f = v.powi(k);
                let df = f64::from(k) * v.powi(k - 1);
                let ddf = f64::from(k) * f64::from(k - 1) * v.powi(k - 2);
                self.unary(f, df, ddf)
            }
        }
    }

    pub fn sqrt(&self) -> Jet2 {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s, -0.25 / (s * s * s))
    }

    pub fn exp(&self) -> Jet2 {
        let e = self.val.exp();
        self.unary(e, e, e)
    }

    pub fn ln(&self) -> Jet2 {
        let v = self.val;
        self.unary(v.ln(), 1.0 / v, -1.0 / (v * v))
    }

    pub fn sin(&self) -> Jet2 {
        self.unary(self.val.sin(), self.val.cos(), -self.val.sin())
    }

    pub fn cos(&self) -> Jet2 {
        self.unary(self.val.cos(), -self.val.sin(), -self.val.cos())
    }

    pub fn recip(&self) -> Jet2 {
        let v = self.val;
        self.unary(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    fn is_finite(&self) -> bool {
        self.val.is_finite()
            && self.grad.iter().all(|g| g.is_finite())
            && self
                .hess
                .iter()
                .all(|row| row.iter().all(|h| h.is_finite()))
    }
}

impl std::ops::Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        let mut out = self;
        out.val += rhs.val;
        for i in 0..MAX_VARS {
            out.grad[i] += rhs.grad[i];
        }
        for i in 0..MAX_VARS {
            for j in 0..MAX_VARS {
                out.hess[i][j] += rhs.hess[i][j];
            }
        }
        out
    }
}

impl std::ops::Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self + (-rhs)
    }
}

impl std::ops::Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        let mut out = self;
        out.val = -out.val;
        for i in 0..MAX_VARS {
            out.grad[i] = -out.grad[i];
        }
        for i in 0..MAX_VARS {
            for j in 0..MAX_VARS {
                out.hess[i][j] = -out.hess[i][j];
            }
        }
        out
    }
}

impl std::ops::Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        let mut out = Jet2::constant(self.val * rhs.val);
        for i in 0..MAX_VARS {
            out.grad[i] = self.grad[i] * rhs.val + rhs.grad[i] * self.val;
        }
        for i in 0..MAX_VARS {
            for j in 0..MAX_VARS {
                out.hess[i][j] = self.hess[i][j] * rhs.val
                    + rhs.hess[i][j] * self.val
                    + self.grad[i] * rhs.grad[j]
                    + self.grad[j] * rhs.grad[i];
            }
        }
        out
    }
}

impl std::ops::Div for Jet2 {
    type Output = Jet2;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, rhs: Jet2) -> Jet2 {
        self * rhs.recip()
    }
}

macro_rules! scalar_ops {
    ($($t:ty),*) => {$(
        impl std::ops::Add<$t> for Jet2 {
            type Output = Jet2;
            fn add(self, rhs: $t) -> Jet2 {
                let mut out = self;
                out.val += rhs as f64;
                out
            }
        }
        impl std::ops::Add<Jet2> for $t {
            type Output = Jet2;
            fn add(self, rhs: Jet2) -> Jet2 {
                rhs + self
            }
        }
        impl std::ops::Sub<$t> for Jet2 {
            type Output = Jet2;
            fn sub(self, rhs: $t) -> Jet2 {
                let mut out = self;
                out.val -= rhs as f64;
                out
            }
        }
        impl std::ops::Sub<Jet2> for $t {
            type Output = Jet2;
            fn sub(self, rhs: Jet2) -> Jet2 {
                -rhs + self
            }
        }
        impl std::ops::Mul<$t> for Jet2 {
            type Output = Jet2;
            fn mul(self, rhs: $t) -> Jet2 {
                let c = rhs as f64;
                let mut out = self;
                out.val *= c;
                for i in 0..MAX_VARS {
                    out.grad[i] *= c;
                }
                for i in 0..MAX_VARS {
                    for j in 0..MAX_VARS {
                        out.hess[i][j] *= c;
                    }
                }
                out
            }
        }
        impl std::ops::Mul<Jet2> for $t {
            type Output = Jet2;
            fn mul(self, rhs: Jet2) -> Jet2 {
                rhs * self
            }
        }
        impl std::ops::Div<$t> for Jet2 {
            type Output = Jet2;
            fn div(self, rhs: $t) -> Jet2 {
                self * (1.0 / rhs as f64)
            }
        }
        impl std::ops::Div<Jet2> for $t {
            type Output = Jet2;
            #[allow(clippy::suspicious_arithmetic_impl)]
            fn div(self, rhs: Jet2) -> Jet2 {
                rhs.recip() * (self as f64)
            }
        }
    )*};
}

scalar_ops!(f64);

/// Which variable block a derivative is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    X,
    Y,
}

type SharedJetFn = Arc<dyn Fn(&[Jet2], &[Jet2]) -> Jet2 + Send + Sync>;

/// A scalar function of `(x, y)` evaluated on jets.
///
/// The closure receives `x` jets of length `n` and `y` jets of length `m`.
/// Cloning is cheap; the closure is shared.
#[derive(Clone)]
pub struct Function {
    n: usize,
    m: usize,
    f: SharedJetFn,
}

impl std::fmt::Debug for Function {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Function")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

impl Function {
    pub fn new<F>(n: usize, m: usize, f: F) -> Self
    where
        F: Fn(&[Jet2], &[Jet2]) -> Jet2 + Send + Sync + 'static,
    {
        assert!(
            n + m <= MAX_VARS,
            "function arity {n}+{m} exceeds the jet capacity {MAX_VARS}"
        );
        Function {
            n,
            m,
            f: Arc::new(f),
        }
    }

    pub fn arity(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// Evaluates the underlying closure on caller-provided jets.
    ///
    /// This exists so a function can be wrapped by another (the
    /// regularization wrapper composes through it); it performs no dimension
    /// or finiteness checks.
    pub fn eval_raw(&self, x: &[Jet2], y: &[Jet2]) -> Jet2 {
        (self.f)(x, y)
    }

    fn check_dims(&self, x: &[f64], y: &[f64]) -> Result<(), AdError> {
        if x.len() != self.n || y.len() != self.m {
            return Err(AdError::DimensionMismatch {
                n: self.n,
                m: self.m,
                got_x: x.len(),
                got_y: y.len(),
            });
        }
        Ok(())
    }

    /// Evaluates with the requested blocks seeded; `x` at `0..n`, `y` at
    /// `n..n+m`.
    fn eval_seeded(
        &self,
        x: &[f64],
        y: &[f64],
        seed_x: bool,
        seed_y: bool,
    ) -> Result<Jet2, AdError> {
        self.check_dims(x, y)?;
        let xs: Vec<Jet2> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if seed_x {
                    Jet2::variable(v, i)
                } else {
                    Jet2::constant(v)
                }
            })
            .collect();
        let ys: Vec<Jet2> = y
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if seed_y {
                    Jet2::variable(v, self.n + i)
                } else {
                    Jet2::constant(v)
                }
            })
            .collect();
        let out = (self.f)(&xs, &ys);
        if !out.is_finite() {
            let channel = if out.val.is_finite() {
                "derivative"
            } else {
                "value"
            };
            return Err(AdError::NotFinite {
                channel: channel.to_string(),
                location: format!("x={x:?}, y={y:?}"),
            });
        }
        Ok(out)
    }

    fn block_range(&self, wrt: Wrt) -> std::ops::Range<usize> {
        match wrt {
            Wrt::X => 0..self.n,
            Wrt::Y => self.n..self.n + self.m,
        }
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64, AdError> {
        Ok(self.eval_seeded(x, y, false, false)?.value())
    }

    pub fn gradient(&self, x: &[f64], y: &[f64], wrt: Wrt) -> Result<Vec<f64>, AdError> {
        let jet = match wrt {
            Wrt::X => self.eval_seeded(x, y, true, false)?,
            Wrt::Y => self.eval_seeded(x, y, false, true)?,
        };
        Ok(self.block_range(wrt).map(|i| jet.deriv(i)).collect())
    }

    /// Value, gradient and Hessian with respect to one block in a single
    /// seeded evaluation.
    pub fn value_grad_hess(
        &self,
        x: &[f64],
        y: &[f64],
        wrt: Wrt,
    ) -> Result<(f64, Vec<f64>, Mat), AdError> {
        let jet = match wrt {
            Wrt::X => self.eval_seeded(x, y, true, false)?,
            Wrt::Y => self.eval_seeded(x, y, false, true)?,
        };
        let range = self.block_range(wrt);
        let grad: Vec<f64> = range.clone().map(|i| jet.deriv(i)).collect();
        let k = range.len();
        let mut hess = Mat::zeros(k, k);
        for (ri, i) in range.clone().enumerate() {
            for (cj, j) in range.clone().enumerate() {
                hess[(ri, cj)] = jet.second_deriv(i, j);
            }
        }
        Ok((jet.value(), grad, hess))
    }

    /// Second derivative block; `(Wrt::Y, Wrt::X)` yields the `m x n` matrix
    /// of mixed partials d^2 f / dy dx.
    pub fn hessian(&self, x: &[f64], y: &[f64], wrt: (Wrt, Wrt)) -> Result<Mat, AdError> {
        let seed_x = wrt.0 == Wrt::X || wrt.1 == Wrt::X;
        let seed_y = wrt.0 == Wrt::Y || wrt.1 == Wrt::Y;
        let jet = self.eval_seeded(x, y, seed_x, seed_y)?;
        let rows = self.block_range(wrt.0);
        let cols = self.block_range(wrt.1);
        let mut h = Mat::zeros(rows.len(), cols.len());
        for (ri, i) in rows.enumerate() {
            for (cj, j) in cols.clone().enumerate() {
                h[(ri, cj)] = jet.second_deriv(i, j);
            }
        }
        Ok(h)
    }
}

/// Stacks the gradients of several functions into a Jacobian, one row per
/// function.
pub fn jacobian(fs: &[Function], x: &[f64], y: &[f64], wrt: Wrt) -> Result<Mat, AdError> {
    let cols = match wrt {
        Wrt::X => x.len(),
        Wrt::Y => y.len(),
    };
    let mut jac = Mat::zeros(fs.len(), cols);
    for (i, f) in fs.iter().enumerate() {
        let g = f.gradient(x, y, wrt)?;
        for (j, v) in g.iter().enumerate() {
            jac[(i, j)] = *v;
        }
    }
    Ok(jac)
}
