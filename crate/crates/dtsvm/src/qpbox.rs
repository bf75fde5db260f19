//! Box-constrained QP: maximize c'λ − ½ λ'Qλ over 0 ≤ λ ≤ u.
//!
//! The iterative solver is cyclic projected coordinate ascent; the oracle
//! enumerates active sets and is meant for cross-checking small problems.

use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is {n}x{n} but linear term has length {c_len}")]
    DimMismatch { n: usize, c_len: usize },
    #[error("matrix not symmetric at ({i}, {j}): |q_ij - q_ji| = {diff}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("box upper bound must be positive and finite, got {0}")]
    BadUpper(f64),
    #[error("non-finite entry in problem data")]
    NonFinite,
    #[error("warm start has length {got}, expected {expected}")]
    BadWarmStart { got: usize, expected: usize },
    #[error("active-set oracle handles at most {max} variables, got {n}")]
    OracleTooLarge { n: usize, max: usize },
    #[error("active-set enumeration found no KKT point")]
    OracleFailed,
}

const SYMMETRY_TOL: f64 = 1e-12;
const ZERO_DIAG: f64 = 1e-12;

/// Validated problem data. `q` symmetric PSD (symmetry is checked, definiteness
/// is the caller's responsibility), box is [0, upper] in every coordinate.
#[derive(Debug, Clone)]
pub struct BoxQp {
    q: Array2<f64>,
    c: Array1<f64>,
    upper: f64,
}

impl BoxQp {
    pub fn new(q: Array2<f64>, c: Array1<f64>, upper: f64) -> Result<Self, QpError> {
        let (rows, cols) = q.dim();
        if rows != cols {
            return Err(QpError::NotSquare { rows, cols });
        }
        if c.len() != rows {
            return Err(QpError::DimMismatch { n: rows, c_len: c.len() });
        }
        if !(upper > 0.0 && upper.is_finite()) {
            return Err(QpError::BadUpper(upper));
        }
        if q.iter().any(|x| !x.is_finite()) || c.iter().any(|x| !x.is_finite()) {
            return Err(QpError::NonFinite);
        }
        for i in 0..rows {
            for j in i + 1..rows {
                let diff = (q[[i, j]] - q[[j, i]]).abs();
                if diff > SYMMETRY_TOL {
                    return Err(QpError::NotSymmetric { i, j, diff });
                }
            }
        }
        Ok(BoxQp { q, c, upper })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn c(&self) -> &Array1<f64> {
        &self.c
    }

    /// Swap in a new linear term, keeping the already-validated quadratic
    /// and box. For callers whose Q is fixed while c changes per iteration.
    pub fn set_linear(&mut self, c: Array1<f64>) -> Result<(), QpError> {
        if c.len() != self.c.len() {
            return Err(QpError::DimMismatch { n: self.c.len(), c_len: c.len() });
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(QpError::NonFinite);
        }
        self.c = c;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub lambda: Array1<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

pub fn default_max_sweeps(n: usize) -> usize {
    (10 * n).max(1000)
}

pub const DEFAULT_TOL: f64 = 1e-8;

/// Worst box-KKT violation of the gradient g = c − Qλ: a coordinate at the
/// lower bound may not want to increase, one at the upper bound may not want
/// to decrease, and an interior one must have zero gradient.
fn kkt_violation(qp: &BoxQp, lambda: &Array1<f64>) -> f64 {
    let g = &qp.c - &qp.q.dot(lambda);
    let mut worst = 0.0f64;
    for i in 0..qp.n() {
        let v = if lambda[i] <= 0.0 {
            g[i].max(0.0)
        } else if lambda[i] >= qp.upper {
            (-g[i]).max(0.0)
        } else {
            g[i].abs()
        };
        worst = worst.max(v);
    }
    worst
}

pub fn solve_box_qp(qp: &BoxQp, warm: Option<ArrayView1<f64>>) -> Result<QpSolution, QpError> {
    solve_box_qp_opts(qp, warm, DEFAULT_TOL, default_max_sweeps(qp.n()))
}

pub fn solve_box_qp_opts(
    qp: &BoxQp,
    warm: Option<ArrayView1<f64>>,
    tol: f64,
    max_sweeps: usize,
) -> Result<QpSolution, QpError> {
    let n = qp.n();
    let mut lambda = match warm {
        Some(w) => {
            if w.len() != n {
                return Err(QpError::BadWarmStart { got: w.len(), expected: n });
            }
            w.mapv(|x| x.clamp(0.0, qp.upper))
        }
        None => Array1::zeros(n),
    };
    if n == 0 {
        return Ok(QpSolution { lambda, sweeps: 0, converged: true, kkt_residual: 0.0 });
    }
    for sweep in 0..max_sweeps {
        let res = kkt_violation(qp, &lambda);
        if res <= tol {
            return Ok(QpSolution { lambda, sweeps: sweep, converged: true, kkt_residual: res });
        }
        for i in 0..n {
            let qii = qp.q[[i, i]];
            let cross = qp.q.row(i).dot(&lambda) - qii * lambda[i];
            if qii <= ZERO_DIAG {
                // objective is linear in this coordinate: go to whichever
                // bound the slope points at, staying at 0 on a flat slope
                lambda[i] = if qp.c[i] - cross > 0.0 { qp.upper } else { 0.0 };
            } else {
                lambda[i] = ((qp.c[i] - cross) / qii).clamp(0.0, qp.upper);
            }
        }
    }
    let res = kkt_violation(qp, &lambda);
    Ok(QpSolution {
        lambda,
        sweeps: max_sweeps,
        converged: res <= tol,
        kkt_residual: res,
    })
}

const ORACLE_MAX_N: usize = 10;

/// Reference solver: tries every assignment of coordinates to
/// {lower bound, interior, upper bound}, solves the interior block exactly,
/// and returns the first assignment whose point is feasible and passes the
/// KKT signs. Exponential in n — cross-checks only.
pub fn oracle_box_qp(qp: &BoxQp, tol: f64) -> Result<Array1<f64>, QpError> {
    let n = qp.n();
    if n > ORACLE_MAX_N {
        return Err(QpError::OracleTooLarge { n, max: ORACLE_MAX_N });
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    // states per coordinate: 0 = at lower, 1 = interior, 2 = at upper,
    // enumerated with coordinate 0 as the most significant base-3 digit
    let total = 3usize.pow(n as u32);
    let mut states = vec![0u8; n];
    for code in 0..total {
        let mut rem = code;
        for i in (0..n).rev() {
            states[i] = (rem % 3) as u8;
            rem /= 3;
        }
        // unpack: fix bound coordinates, solve for the interior block
        let free: Vec<usize> = (0..n).filter(|&i| states[i] == 1).collect();
        let mut lambda = Array1::zeros(n);
        for i in 0..n {
            if states[i] == 2 {
                lambda[i] = qp.upper;
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let mut a = Array2::zeros((k, k));
            let mut b = Array1::zeros(k);
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    a[[r, s]] = qp.q[[i, j]];
                }
                let mut rhs = qp.c[i];
                for j in 0..n {
                    if states[j] == 2 {
                        rhs -= qp.q[[i, j]] * qp.upper;
                    }
                }
                b[r] = rhs;
            }
            let Some(x) = solve_dense(a, b) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                if x[r] < -tol || x[r] > qp.upper + tol {
                    ok = false;
                    break;
                }
                lambda[i] = x[r].clamp(0.0, qp.upper);
            }
            if !ok {
                continue;
            }
        }
        let g = &qp.c - &qp.q.dot(&lambda);
        let mut ok = true;
        for i in 0..n {
            let pass = match states[i] {
                0 => g[i] <= tol,
                2 => g[i] >= -tol,
                _ => g[i].abs() <= tol,
            };
            if !pass {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(lambda);
        }
    }
    Err(QpError::OracleFailed)
}

/// Gaussian elimination with partial pivoting; None when a pivot vanishes.
fn solve_dense(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| a[[r, col]].abs().total_cmp(&a[[s, col]].abs()))
            .unwrap();
        if a[[pivot_row, col]].abs() < 1e-12 {
            return None;
        }
        if pivot_row != col {
            for j in 0..n {
                let tmp = a[[col, j]];
                a[[col, j]] = a[[pivot_row, j]];
                a[[pivot_row, j]] = tmp;
            }
            b.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let factor = a[[r, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[[r, j]] -= factor * a[[col, j]];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for r in (0..n).rev() {
        let mut acc = b[r];
        for j in r + 1..n {
            acc -= a[[r, j]] * x[j];
        }
        x[r] = acc / a[[r, r]];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, arr2};

    fn solve(q: Array2<f64>, c: Array1<f64>, u: f64) -> Array1<f64> {
        let qp = BoxQp::new(q, c, u).unwrap();
        let sol = solve_box_qp(&qp, None).unwrap();
        assert!(sol.converged, "kkt residual {}", sol.kkt_residual);
        sol.lambda
    }

    #[test]
    fn scalar_interior() {
        let l = solve(arr2(&[[2.0]]), arr1(&[1.0]), 10.0);
        assert_abs_diff_eq!(l[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn scalar_pinned_at_zero() {
        let l = solve(arr2(&[[2.0]]), arr1(&[-1.0]), 10.0);
        assert_eq!(l[0], 0.0);
    }

    #[test]
    fn coupled_pair() {
        let qp = BoxQp::new(arr2(&[[2.0, 1.0], [1.0, 2.0]]), arr1(&[2.0, 2.0]), 10.0).unwrap();
        let sol = solve_box_qp_opts(&qp, None, 1e-12, 10_000).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.lambda[0], 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.lambda[1], 2.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn one_coordinate_clipped_at_upper() {
        let l = solve(arr2(&[[2.0, 0.0], [0.0, 2.0]]), arr1(&[1.0, 8.0]), 2.0);
        assert_abs_diff_eq!(l[0], 0.5, epsilon = 1e-12);
        assert_eq!(l[1], 2.0);
    }

    #[test]
    fn zero_curvature_goes_bang_bang() {
        let l = solve(arr2(&[[0.0, 0.0], [0.0, 0.0]]), arr1(&[1.0, -1.0]), 3.0);
        assert_eq!(l[0], 3.0);
        assert_eq!(l[1], 0.0);
    }

    #[test]
    fn diagonal_closed_form() {
        let q = arr2(&[[3.0, 0.0], [0.0, 0.5]]);
        let c = arr1(&[-4.0, 10.0]);
        let l = solve(q.clone(), c.clone(), 5.0);
        for i in 0..2 {
            assert_abs_diff_eq!(l[i], (c[i] / q[[i, i]]).clamp(0.0, 5.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn positive_rescaling_leaves_solution_unchanged() {
        // fixed sweep budget and tol 0 so both runs take identical
        // trajectories; the power-of-two scale divides back out exactly
        let q = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let c = arr1(&[2.0, 2.0]);
        let base = BoxQp::new(q.clone(), c.clone(), 10.0).unwrap();
        let scaled = BoxQp::new(q.mapv(|x| 4.0 * x), c.mapv(|x| 4.0 * x), 10.0).unwrap();
        let a = solve_box_qp_opts(&base, None, 0.0, 40).unwrap();
        let b = solve_box_qp_opts(&scaled, None, 0.0, 40).unwrap();
        assert_eq!(a.lambda, b.lambda);
    }

    #[test]
    fn warm_start_at_solution_needs_no_sweeps() {
        let qp = BoxQp::new(arr2(&[[2.0, 1.0], [1.0, 2.0]]), arr1(&[2.0, 2.0]), 10.0).unwrap();
        let cold = solve_box_qp(&qp, None).unwrap();
        let warm = solve_box_qp(&qp, Some(cold.lambda.view())).unwrap();
        assert_eq!(warm.sweeps, 0);
        assert_eq!(warm.lambda, cold.lambda);
    }

    #[test]
    fn sweep_budget_exhaustion_is_reported() {
        let qp = BoxQp::new(arr2(&[[2.0, 1.0], [1.0, 2.0]]), arr1(&[2.0, 2.0]), 10.0).unwrap();
        let sol = solve_box_qp_opts(&qp, None, 1e-15, 1).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.sweeps, 1);
        assert!(sol.kkt_residual > 1e-15);
    }

    #[test]
    fn validation_rejects_bad_data() {
        assert!(matches!(
            BoxQp::new(arr2(&[[1.0, 0.5], [0.4, 1.0]]), arr1(&[0.0, 0.0]), 1.0),
            Err(QpError::NotSymmetric { .. })
        ));
        assert!(matches!(
            BoxQp::new(arr2(&[[1.0]]), arr1(&[0.0]), 0.0),
            Err(QpError::BadUpper(_))
        ));
        assert!(matches!(
            BoxQp::new(arr2(&[[1.0]]), arr1(&[0.0, 1.0]), 1.0),
            Err(QpError::DimMismatch { .. })
        ));
        assert!(matches!(
            BoxQp::new(arr2(&[[f64::NAN]]), arr1(&[0.0]), 1.0),
            Err(QpError::NonFinite)
        ));
        assert!(matches!(
            BoxQp::new(Array2::zeros((2, 3)), arr1(&[0.0, 0.0]), 1.0),
            Err(QpError::NotSquare { .. })
        ));
    }

    #[test]
    fn oracle_matches_solver_on_spec_cases() {
        let cases: Vec<(Array2<f64>, Array1<f64>, f64)> = vec![
            (arr2(&[[2.0]]), arr1(&[1.0]), 10.0),
            (arr2(&[[2.0]]), arr1(&[-1.0]), 10.0),
            (arr2(&[[2.0, 1.0], [1.0, 2.0]]), arr1(&[2.0, 2.0]), 10.0),
            (arr2(&[[2.0, 0.0], [0.0, 2.0]]), arr1(&[1.0, 8.0]), 2.0),
        ];
        for (q, c, u) in cases {
            let qp = BoxQp::new(q, c, u).unwrap();
            let it = solve_box_qp(&qp, None).unwrap().lambda;
            let en = oracle_box_qp(&qp, 1e-9).unwrap();
            for i in 0..qp.n() {
                assert_abs_diff_eq!(it[i], en[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn oracle_refuses_large_problems() {
        let n = 11;
        let qp = BoxQp::new(Array2::eye(n), Array1::ones(n), 1.0).unwrap();
        assert!(matches!(
            oracle_box_qp(&qp, 1e-9),
            Err(QpError::OracleTooLarge { n: 11, max: 10 })
        ));
    }

    #[test]
    fn tiny_diagonal_treated_as_linear() {
        // curvature below the threshold: coordinate must land on a bound
        let qp = BoxQp::new(arr2(&[[1e-13]]), arr1(&[1.0]), 2.0).unwrap();
        let sol = solve_box_qp(&qp, None).unwrap();
        assert_eq!(sol.lambda[0], 2.0);
    }
}
