//! Squared-hinge (L2 max) penalties `rho(z) = gamma * max(h(z), 0)^2` that
//! replace an inequality `h(z) <= 0`.
//!
//! A penalty is expressed as a single least-squares residual row
//! `max(h(z), 0)` with weight `2 * gamma`, so it can be appended to a
//! [`Residual`](crate::model::Residual) and integrated together with the rest
//! of the cost.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Scalar constraint function `h(z)`; violation when positive.
pub trait ScalarConstraint: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
}

/// `h(z) = a^T z + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    coeffs: Vec<f64>,
    offset: f64,
}

impl AffineConstraint {
    pub fn new(coeffs: Vec<f64>, offset: f64) -> Self {
        Self { coeffs, offset }
    }

    /// `z[index] <= upper`, i.e. `h(z) = z[index] - upper`.
    pub fn upper_bound(dim: usize, index: usize, upper: f64) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[index] = 1.0;
        Self::new(coeffs, -upper)
    }

    /// `z[index] >= lower`, i.e. `h(z) = lower - z[index]`.
    pub fn lower_bound(dim: usize, index: usize, lower: f64) -> Self {
        let mut coeffs = vec![0.0; dim];
        coeffs[index] = -1.0;
        Self::new(coeffs, lower)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

impl ScalarConstraint for AffineConstraint {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn value(&self, z: &[f64]) -> f64 {
        self.coeffs.iter().zip(z).map(|(a, zi)| a * zi).sum::<f64>() + self.offset
    }

    fn gradient(&self, _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coeffs);
    }
}

#[derive(Debug, Clone)]
pub struct L2MaxPenalty<C> {
    constraint: C,
    gamma: f64,
}

impl<C: ScalarConstraint> L2MaxPenalty<C> {
    pub fn new(constraint: C, gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "penalty weight must be finite and >= 0, got {gamma}"
            )));
        }
        Ok(Self { constraint, gamma })
    }

    pub fn constraint(&self) -> &C {
        &self.constraint
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Weight of the residual row in `W`; `1/2 * (2 gamma) * res^2 = rho`.
    pub fn residual_weight(&self) -> f64 {
        2.0 * self.gamma
    }

    /// `rho(z) = gamma * max(h(z), 0)^2`.
    pub fn value(&self, z: &[f64]) -> f64 {
        let v = self.constraint.value(z).max(0.0);
        self.gamma * v * v
    }

    /// Residual `max(h(z), 0)`; writes its Jacobian row into `jac_row`.
    ///
    /// At the kink `h(z) = 0` the zero row is selected.
    pub fn residual(&self, z: &[f64], jac_row: &mut [f64]) -> f64 {
        let h = self.constraint.value(z);
        if h > 0.0 {
            self.constraint.gradient(z, jac_row);
            h
        } else {
            jac_row.iter_mut().for_each(|v| *v = 0.0);
            0.0
        }
    }

    /// Exact gradient `2 gamma max(h, 0) grad h`.
    pub fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let res = self.residual(z, out);
        let scale = 2.0 * self.gamma * res;
        out.iter_mut().for_each(|v| *v *= scale);
    }

    /// Gauss-Newton Hessian `2 gamma grad h grad h^T` when active, zero
    /// otherwise. Coincides with the exact Hessian for affine `h` away from
    /// the kink.
    pub fn gn_hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let n = self.constraint.dim();
        let mut row = vec![0.0; n];
        if self.residual(z, &mut row) > 0.0 {
            let g = nalgebra::DVector::from_vec(row);
            &g * g.transpose() * (2.0 * self.gamma)
        } else {
            DMatrix::zeros(n, n)
        }
    }
}
