use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareOptions {
    pub max_iter: usize,
    /// Bound on the Frobenius norm of the fixed-point residual.
    pub tol: f64,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            tol: 1e-10,
        }
    }
}

fn riccati_map(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    let gain = s.cholesky()?.solve(&(b.transpose() * &pa));
    let next = a.transpose() * &pa - (a.transpose() * &pb) * gain + q;
    // keep the iterate exactly symmetric
    Some((&next + next.transpose()) * 0.5)
}

/// Frobenius norm of `A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q - P`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.transpose() * &pb;
    match s.lu().solve(&(b.transpose() * &pa)) {
        Some(gain) => (a.transpose() * &pa - (a.transpose() * &pb) * gain + q - p).norm(),
        None => f64::INFINITY,
    }
}

/// Solves the discrete algebraic Riccati equation by iterating the Riccati
/// map from `P_0 = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    opts: DareOptions,
) -> Result<DMatrix<f64>> {
    let nx = a.nrows();
    let nu = b.ncols();
    if a.ncols() != nx || b.nrows() != nx || q.shape() != (nx, nx) || r.shape() != (nu, nu) {
        return Err(Error::DimensionMismatch {
            context: "DARE matrices",
            expected: nx,
            got: b.nrows(),
        });
    }
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = riccati_map(a, b, q, r, &p).ok_or(Error::NotPositiveDefinite)?;
        if next.iter().any(|v| !v.is_finite()) {
            break;
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= opts.tol {
            residual = dare_residual(a, b, q, r, &p);
            if residual <= opts.tol {
                return Ok(p);
            }
        }
    }
    Err(Error::DareNonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_golden_ratio() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = solve_dare(&one, &one, &one, &one, DareOptions::default()).unwrap();
        assert!((p[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn zero_dynamics_gives_q() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = DMatrix::from_element(1, 1, 0.7);
        let p = solve_dare(&a, &b, &q, &r, DareOptions::default()).unwrap();
        assert!((p - q).amax() < 1e-14);
    }

    #[test]
    fn unstabilizable_pair_fails() {
        // unstable mode not reachable through B
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let r = DMatrix::identity(1, 1);
        let opts = DareOptions {
            max_iter: 2000,
            tol: 1e-10,
        };
        assert!(solve_dare(&a, &b, &q, &r, opts).is_err());
    }
}
