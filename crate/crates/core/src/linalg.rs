//! Dense linear algebra for the small KKT, sensitivity and adjoint systems.
//!
//! Every matrix in this crate has at most a few dozen rows, so the module
//! keeps a plain row-major layout and a partial-pivoting LU factorization
//! with a relative singularity threshold. The condition estimate exists for
//! diagnostics only; it never gates a solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular matrix: pivot {pivot:.3e} below threshold {threshold:.3e} in column {col}")]
    Singular {
        pivot: f64,
        threshold: f64,
        col: usize,
    },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NotFinite { row: usize, col: usize },
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(
            rows.iter().all(|row| row.len() == c),
            "ragged rows in Mat::from_rows"
        );
        Mat {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Induced 1-norm (maximum absolute column sum).
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum())
            .fold(0.0, f64::max)
    }

    fn find_non_finite(&self) -> Option<(usize, usize)> {
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !self[(i, j)].is_finite() {
                    return Some((i, j));
                }
            }
        }
        None
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting of a square matrix.
///
/// `swaps[k]` records the row exchanged with row `k` during elimination.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Mat,
    swaps: Vec<usize>,
}

impl Lu {
    /// Factors `a`, rejecting pivots below `rel_threshold * a.max_abs()`.
    pub fn factor(a: &Mat, rel_threshold: f64) -> Result<Lu, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        if let Some((row, col)) = a.find_non_finite() {
            return Err(LinalgError::NotFinite { row, col });
        }
        let n = a.rows;
        let threshold = rel_threshold * a.max_abs();
        let mut lu = a.clone();
        let mut swaps = vec![0usize; n];
        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_val = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = i;
                }
            }
            if pivot_val <= threshold {
                return Err(LinalgError::Singular {
                    pivot: pivot_val,
                    threshold,
                    col: k,
                });
            }
            swaps[k] = pivot_row;
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pivot_row, j)];
                    lu[(pivot_row, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                for j in k + 1..n {
                    let sub = factor * lu[(k, j)];
                    lu[(i, j)] -= sub;
                }
            }
        }
        Ok(Lu { lu, swaps })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs length {} does not match system size {}",
                b.len(),
                n
            )));
        }
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.swaps[k]);
        }
        // Forward: L has unit diagonal.
        for i in 1..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        // Backward.
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        Ok(x)
    }

    /// Solves `A^T x = b` using the same factorization.
    ///
    /// With `P A = L U` the transpose system reads `U^T L^T P x = b`.
    pub fn solve_transposed(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "rhs length {} does not match system size {}",
                b.len(),
                n
            )));
        }
        let mut x = b.to_vec();
        // Forward with U^T (lower triangular, diagonal from U).
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[(j, i)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        // Backward with L^T (upper triangular, unit diagonal).
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(j, i)] * x[j];
            }
        }
        // Undo the row permutation: x := P^T x.
        for k in (0..n).rev() {
            x.swap(k, self.swaps[k]);
        }
        Ok(x)
    }

    /// Hager-style estimate of the 1-norm condition number.
    ///
    /// `a_norm_one` is the 1-norm of the factored matrix. The estimate is a
    /// lower bound on the true condition number and is for diagnostics only.
    pub fn cond_one_estimate(&self, a_norm_one: f64) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = match self.solve(&x) {
                Ok(y) => y,
                Err(_) => return f64::INFINITY,
            };
            est = y.iter().map(|v| v.abs()).sum();
            let xi: Vec<f64> = y
                .iter()
                .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
                .collect();
            let z = match self.solve_transposed(&xi) {
                Ok(z) => z,
                Err(_) => return f64::INFINITY,
            };
            let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0), |(jm, vm), (j, v)| {
                if v.abs() > vm {
                    (j, v.abs())
                } else {
                    (jm, vm)
                }
            });
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= zx.abs() {
                break;
            }
            x = vec![0.0; n];
            x[jmax] = 1.0;
        }
        est * a_norm_one
    }
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lu_solves_known_system() {
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![4.0, 0.0]]);
        let lu = Lu::factor(&a, 1e-12).unwrap();
        let x = lu.solve(&[0.0, 8.0]).unwrap();
        assert_relative_eq!(x[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], -4.0, epsilon = 1e-14);
    }

    #[test]
    fn lu_rejects_singular_matrix() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        match Lu::factor(&a, 1e-12) {
            Err(LinalgError::Singular { .. }) => {}
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn transpose_solve_matches_explicit_transpose() {
        let a = Mat::from_rows(&[
            vec![3.0, -1.0, 2.0],
            vec![1.0, 4.0, 0.5],
            vec![-2.0, 1.5, 5.0],
        ]);
        let b = [1.0, -2.0, 3.0];
        let lu = Lu::factor(&a, 1e-12).unwrap();
        let x1 = lu.solve_transposed(&b).unwrap();
        let lut = Lu::factor(&a.transpose(), 1e-12).unwrap();
        let x2 = lut.solve(&b).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert_relative_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn residual_of_random_solves_is_small() {
        // Deterministic pseudo-random fill; checks A x - b directly.
        let mut seed = 42u64;
        let mut next = move || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for n in 1..=8 {
            let mut a = Mat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = next();
                }
                a[(i, i)] += 4.0; // keep it comfortably nonsingular
            }
            let b: Vec<f64> = (0..n).map(|_| next()).collect();
            let lu = Lu::factor(&a, 1e-12).unwrap();
            let x = lu.solve(&b).unwrap();
            let r: Vec<f64> = a
                .matvec(&x)
                .iter()
                .zip(&b)
                .map(|(ax, bi)| ax - bi)
                .collect();
            assert!(norm_inf(&r) <= 1e-10 * (1.0 + norm_inf(&b)));
        }
    }

    #[test]
    fn condition_estimate_is_exact_for_diagonal() {
        let a = Mat::from_rows(&[vec![10.0, 0.0], vec![0.0, 0.1]]);
        let lu = Lu::factor(&a, 1e-12).unwrap();
        let cond = lu.cond_one_estimate(a.norm_one());
        assert_relative_eq!(cond, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn identity_and_matvec_behave() {
        let i3 = Mat::identity(3);
        let v = vec![1.0, -2.0, 0.5];
        assert_eq!(i3.matvec(&v), v);
        assert_eq!(i3.norm_one(), 1.0);
    }
}
