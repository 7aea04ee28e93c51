//! Butcher tableaus for the Runge-Kutta schemes used by the integrator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_RADAU_STAGES: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    order: usize,
}

impl ButcherTableau {
    /// Builds a tableau from raw coefficients, checking shapes and the
    /// consistency conditions `sum b = 1` and `sum_l a_jl = c_j`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: DVector<f64>, order: usize) -> Result<Self> {
        let s = b.len();
        if s == 0 || a.nrows() != s || a.ncols() != s || c.len() != s {
            return Err(Error::InvalidArgument(format!(
                "inconsistent tableau shapes: A {}x{}, b {}, c {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        if (b.sum() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("tableau weights must sum to 1".into()));
        }
        for j in 0..s {
            if (a.row(j).sum() - c[j]).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row sum of A differs from c at stage {j}")));
            }
        }
        Ok(Self { a, b, c, order })
    }

    /// Explicit (forward) Euler: `A = [[0]], b = [1], c = [0]`.
    pub fn explicit_euler() -> Self {
        Self {
            a: DMatrix::zeros(1, 1),
            b: DVector::from_element(1, 1.0),
            c: DVector::zeros(1),
            order: 1,
        }
    }

    /// The `s`-stage Radau IIA collocation method of order `2s - 1`.
    ///
    /// Nodes are the roots of `P_s(2x-1) - P_{s-1}(2x-1)` (Legendre), refined
    /// by deflated Newton iteration; `A` solves the collocation conditions
    /// `sum_l a_jl c_l^(q-1) = c_j^q / q`, `q = 1..s`, and `b` is the last row.
    pub fn radau_iia(n_stages: usize) -> Result<Self> {
        if n_stages == 0 || n_stages > MAX_RADAU_STAGES {
            return Err(Error::InvalidArgument(format!(
                "Radau IIA stage count must be in 1..={MAX_RADAU_STAGES}, got {n_stages}"
            )));
        }
        let s = n_stages;
        let c = DVector::from_vec(radau_right_nodes(s));

        // A V = C  with V[l, q] = c_l^q, C[j, q] = c_j^(q+1) / (q+1)
        let vander = DMatrix::from_fn(s, s, |l, q| c[l].powi(q as i32));
        let rhs = DMatrix::from_fn(s, s, |j, q| c[j].powi(q as i32 + 1) / (q + 1) as f64);
        let lu = vander.transpose().lu();
        let at = lu
            .solve(&rhs.transpose())
            .ok_or_else(|| Error::InvalidArgument("singular collocation system".into()))?;
        let a = at.transpose();
        let b = a.row(s - 1).transpose();
        Ok(Self {
            a,
            b,
            c,
            order: 2 * s - 1,
        })
    }

    pub fn n_stages(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn has_nonnegative_weights(&self) -> bool {
        self.b.iter().all(|v| *v >= 0.0)
    }

    /// Largest violation of `sum_l a_jl c_l^(q-1) = c_j^q / q`, `q = 1..s`.
    pub fn collocation_defect(&self) -> f64 {
        let s = self.n_stages();
        let mut worst: f64 = 0.0;
        for j in 0..s {
            for q in 1..=s {
                let lhs: f64 = (0..s).map(|l| self.a[(j, l)] * self.c[l].powi(q as i32 - 1)).sum();
                worst = worst.max((lhs - self.c[j].powi(q as i32) / q as f64).abs());
            }
        }
        worst
    }
}

/// Legendre polynomial `P_n(y)` and its derivative.
fn legendre(n: usize, y: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, y);
    let (mut d_prev, mut d) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * y * p - kf * p_prev) / (kf + 1.0);
        let d_next = ((2.0 * kf + 1.0) * (p + y * d) - kf * d_prev) / (kf + 1.0);
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// `R_s(x) = P_s(2x-1) - P_{s-1}(2x-1)` and `dR_s/dx`.
fn radau_poly(s: usize, x: f64) -> (f64, f64) {
    let y = 2.0 * x - 1.0;
    let (ps, dps) = legendre(s, y);
    let (pm, dpm) = legendre(s - 1, y);
    (ps - pm, 2.0 * (dps - dpm))
}

fn radau_right_nodes(s: usize) -> Vec<f64> {
    let mut roots = vec![1.0];
    // Chebyshev-like guesses for the right Radau points on [0, 1].
    let denom = (2 * s - 1) as f64;
    for k in 1..s {
        let mut x = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * k as f64 / denom).cos());
        for _ in 0..100 {
            let (p, dp) = radau_poly(s, x);
            let deflate: f64 = roots.iter().map(|r| 1.0 / (x - r)).sum();
            let step = p / (dp - p * deflate);
            x -= step;
            if step.abs() < 1e-14 {
                break;
            }
        }
        roots.push(x);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    *roots.last_mut().unwrap() = 1.0;
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_stage_is_backward_euler() {
        let t = ButcherTableau::radau_iia(1).unwrap();
        assert_eq!(t.a()[(0, 0)], 1.0);
        assert_eq!(t.b()[0], 1.0);
        assert_eq!(t.c()[0], 1.0);
        assert_eq!(t.order(), 1);
    }

    #[test]
    fn two_stage_regression_values() {
        let t = ButcherTableau::radau_iia(2).unwrap();
        let tol = 1e-14;
        assert!((t.c()[0] - 1.0 / 3.0).abs() < tol);
        assert_eq!(t.c()[1], 1.0);
        let expect = [[5.0 / 12.0, -1.0 / 12.0], [0.75, 0.25]];
        for j in 0..2 {
            for l in 0..2 {
                assert!((t.a()[(j, l)] - expect[j][l]).abs() < tol);
            }
        }
        assert!((t.b()[0] - 0.75).abs() < tol && (t.b()[1] - 0.25).abs() < tol);
        let bc: f64 = (0..2).map(|j| t.b()[j] * t.c()[j]).sum();
        let bc2: f64 = (0..2).map(|j| t.b()[j] * t.c()[j] * t.c()[j]).sum();
        assert!((bc - 0.5).abs() < tol && (bc2 - 1.0 / 3.0).abs() < tol);
    }

    #[test]
    fn three_stage_nodes_closed_form() {
        let t = ButcherTableau::radau_iia(3).unwrap();
        let r6 = 6f64.sqrt();
        assert!((t.c()[0] - (0.4 - r6 / 10.0)).abs() < 1e-14);
        assert!((t.c()[1] - (0.4 + r6 / 10.0)).abs() < 1e-14);
        assert!((t.a()[(2, 2)] - 1.0 / 9.0).abs() < 1e-13);
    }

    #[test]
    fn all_stage_counts_satisfy_invariants() {
        for s in 1..=MAX_RADAU_STAGES {
            let t = ButcherTableau::radau_iia(s).unwrap();
            assert_eq!(t.n_stages(), s);
            assert_eq!(t.c()[s - 1], 1.0);
            assert!((t.b().sum() - 1.0).abs() <= 1e-12, "s={s}");
            for j in 0..s {
                assert!((t.a().row(j).sum() - t.c()[j]).abs() <= 1e-12, "s={s} row {j}");
                assert!(t.c()[j] > 0.0 && t.c()[j] <= 1.0);
            }
            for j in 1..s {
                assert!(t.c()[j] > t.c()[j - 1], "nodes must be distinct and sorted");
            }
            assert!(t.has_nonnegative_weights(), "s={s}");
            assert!(t.collocation_defect() <= 1e-12, "s={s}: {}", t.collocation_defect());
        }
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(ButcherTableau::radau_iia(0).is_err());
        assert!(ButcherTableau::radau_iia(10).is_err());
    }

    #[test]
    fn explicit_euler_definition() {
        let t = ButcherTableau::explicit_euler();
        assert_eq!(t.n_stages(), 1);
        assert_eq!(t.a()[(0, 0)], 0.0);
        assert_eq!(t.b()[0], 1.0);
        assert_eq!(t.c()[0], 0.0);
    }

    #[test]
    fn new_validates_consistency() {
        let bad = ButcherTableau::new(
            DMatrix::from_element(1, 1, 0.5),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 0.0),
            1,
        );
        assert!(bad.is_err());
    }
}
