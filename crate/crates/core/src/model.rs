//! Model abstractions: implicit dynamics `0 = f_impl(t, x, xdot, u)` and
//! nonlinear least-squares costs `l(x, u) = 1/2 ||r(x, u)||_W^2`.
//!
//! All callbacks write into caller-provided buffers so that evaluation inside
//! the integrator does not allocate.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Implicit dynamics `0 = f_impl(t, x, xdot, u)` with analytic Jacobians.
pub trait DynamicsModel: Send + Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;

    /// Writes the residual (length `nx`) into `out`.
    fn eval(&self, t: f64, x: &[f64], xdot: &[f64], u: &[f64], out: &mut [f64]);

    /// Fills the Jacobians of the residual with respect to `x` (nx x nx),
    /// `xdot` (nx x nx) and `u` (nx x nu). Every entry is overwritten.
    fn jacobians(
        &self,
        t: f64,
        x: &[f64],
        xdot: &[f64],
        u: &[f64],
        jac_x: &mut DMatrix<f64>,
        jac_xdot: &mut DMatrix<f64>,
        jac_u: &mut DMatrix<f64>,
    );
}

/// Explicit ODE `xdot = f(t, x, u)`; wrap it with [`ImplicitOde`] to obtain a
/// [`DynamicsModel`].
pub trait ExplicitOde: Send + Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Fills `df/dx` and `df/du`.
    fn rhs_jacobians(
        &self,
        t: f64,
        x: &[f64],
        u: &[f64],
        jac_x: &mut DMatrix<f64>,
        jac_u: &mut DMatrix<f64>,
    );
}

/// `f_impl = xdot - f(t, x, u)`.
#[derive(Debug, Clone)]
pub struct ImplicitOde<F>(pub F);

impl<F: ExplicitOde> DynamicsModel for ImplicitOde<F> {
    fn nx(&self) -> usize {
        self.0.nx()
    }

    fn nu(&self) -> usize {
        self.0.nu()
    }

    fn eval(&self, t: f64, x: &[f64], xdot: &[f64], u: &[f64], out: &mut [f64]) {
        self.0.rhs(t, x, u, out);
        for (o, xd) in out.iter_mut().zip(xdot) {
            *o = xd - *o;
        }
    }

    fn jacobians(
        &self,
        t: f64,
        x: &[f64],
        _xdot: &[f64],
        u: &[f64],
        jac_x: &mut DMatrix<f64>,
        jac_xdot: &mut DMatrix<f64>,
        jac_u: &mut DMatrix<f64>,
    ) {
        self.0.rhs_jacobians(t, x, u, jac_x, jac_u);
        jac_x.neg_mut();
        jac_u.neg_mut();
        jac_xdot.fill_with_identity();
    }
}

/// Residual function `r(x, u)` of a nonlinear least-squares cost.
pub trait Residual: Send + Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn ny(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Jacobian with respect to `(x, u)`, shape `ny x (nx + nu)`.
    fn jacobian(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>);
}

/// Nonlinear least-squares cost `l(x, u) = 1/2 ||r(x, u)||_W^2`.
#[derive(Clone)]
pub struct ResidualCost {
    residual: Arc<dyn Residual>,
    weight: DMatrix<f64>,
    // L^T with W = L L^T
    weight_root_t: DMatrix<f64>,
}

impl std::fmt::Debug for ResidualCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResidualCost")
            .field("ny", &self.ny())
            .field("weight", &self.weight)
            .finish()
    }
}

impl ResidualCost {
    /// Validates that `weight` is `ny x ny`, symmetric to 1e-12 and positive
    /// definite (Cholesky succeeds).
    pub fn new(residual: Arc<dyn Residual>, weight: DMatrix<f64>) -> Result<Self> {
        let ny = residual.ny();
        if weight.nrows() != ny || weight.ncols() != ny {
            return Err(Error::DimensionMismatch {
                context: "cost weight",
                expected: ny,
                got: weight.nrows(),
            });
        }
        let scale = weight.amax().max(1.0);
        if (&weight - weight.transpose()).amax() > 1e-12 * scale {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = weight.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let weight_root_t = chol.l().transpose();
        Ok(Self {
            residual,
            weight,
            weight_root_t,
        })
    }

    pub fn residual(&self) -> &dyn Residual {
        self.residual.as_ref()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    /// Upper-triangular `L^T` with `W = L L^T`.
    pub fn weight_root_t(&self) -> &DMatrix<f64> {
        &self.weight_root_t
    }

    pub fn nx(&self) -> usize {
        self.residual.nx()
    }

    pub fn nu(&self) -> usize {
        self.residual.nu()
    }

    pub fn ny(&self) -> usize {
        self.residual.ny()
    }

    /// `1/2 r^T W r` for a precomputed residual.
    pub fn weighted_half_norm(&self, r: &[f64]) -> f64 {
        let n = r.len();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.weight[(i, j)] * r[j];
            }
            acc += r[i] * row;
        }
        0.5 * acc
    }

    /// Evaluates `l(x, u)`. Allocates; use the integrator path in hot loops.
    pub fn value(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut r = vec![0.0; self.ny()];
        self.residual.eval(x, u, &mut r);
        self.weighted_half_norm(&r)
    }

    /// Gradient `J^T W r` of `l` with respect to `(x, u)`.
    pub fn gradient(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let ny = self.ny();
        let mut r = DVector::zeros(ny);
        let mut jac = DMatrix::zeros(ny, self.nx() + self.nu());
        self.residual.eval(x, u, r.as_mut_slice());
        self.residual.jacobian(x, u, &mut jac);
        jac.transpose() * (&self.weight * r)
    }
}
