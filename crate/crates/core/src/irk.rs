//! Implicit Runge-Kutta integration with forward sensitivities and
//! Gauss-Newton Runge-Kutta (GNRK) cost integration.
//!
//! One call of [`IrkIntegrator::step_with_sens`] advances the state over a
//! shooting interval `[t0, t0 + dt]` split into `n_steps` equidistant
//! substeps. On every substep the `n_stages * nx` stage system
//!
//! ```text
//! s_j = x + h sum_l a_jl k_l,    0 = f_impl(t + c_j h, s_j, k_j, u)
//! ```
//!
//! is solved by simplified Newton iteration, the stage derivatives
//! `dk/d(x0, u)` follow from the implicit function theorem at the converged
//! point, and the stage states with their sensitivities `ds_j/d(x0, u)` are
//! handed to a visitor. [`gnrk_cost_step`] is such a visitor: it accumulates
//! the integrated least-squares cost, its exact gradient and its Gauss-Newton
//! Hessian in place, so the memory needed does not depend on `n_steps`.

use nalgebra::{DMatrix, DMatrixView, DVector, Dyn, LU};

use crate::butcher::ButcherTableau;
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, ResidualCost};

#[derive(Debug, Clone, PartialEq)]
pub struct IrkSettings {
    pub tableau: ButcherTableau,
    pub n_steps: usize,
    /// Stage-residual tolerance, scaled by `max(1, |k|_inf)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl IrkSettings {
    pub const DEFAULT_NEWTON_TOL: f64 = 1e-12;
    pub const DEFAULT_NEWTON_MAX_ITER: usize = 20;

    pub fn new(tableau: ButcherTableau, n_steps: usize) -> Self {
        Self {
            tableau,
            n_steps,
            newton_tol: Self::DEFAULT_NEWTON_TOL,
            newton_max_iter: Self::DEFAULT_NEWTON_MAX_ITER,
        }
    }

    /// Radau IIA with `n_stages` stages.
    pub fn radau(n_stages: usize, n_steps: usize) -> Result<Self> {
        Ok(Self::new(ButcherTableau::radau_iia(n_stages)?, n_steps))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be >= 1".into()));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidArgument("newton_tol must be > 0".into()));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidArgument("newton_max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of integrating one shooting interval.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub x_next: DVector<f64>,
    /// `d x_next / d(x0, u)`, shape `nx x (nx + nu)`.
    pub sens: DMatrix<f64>,
    /// Integrated cost over the interval.
    pub cost: f64,
    /// Exact gradient of `cost` with respect to `(x0, u)`.
    pub grad: DVector<f64>,
    /// Gauss-Newton Hessian of `cost` with respect to `(x0, u)`.
    pub hess: DMatrix<f64>,
}

impl StepOutput {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        let nw = nx + nu;
        Self {
            x_next: DVector::zeros(nx),
            sens: DMatrix::zeros(nx, nw),
            cost: 0.0,
            grad: DVector::zeros(nw),
            hess: DMatrix::zeros(nw, nw),
        }
    }

    pub fn reset_cost(&mut self) {
        self.cost = 0.0;
        self.grad.fill(0.0);
        self.hess.fill(0.0);
    }
}

/// Converged stage values of one substep and their sensitivities with
/// respect to the interval's initial state and control.
#[derive(Debug, Clone, Copy)]
pub struct SubstepStages<'a> {
    /// Start time of the substep.
    pub t: f64,
    /// Substep length `dt / n_steps`.
    pub h: f64,
    pub u: &'a [f64],
    pub tableau: &'a ButcherTableau,
    nx: usize,
    states: &'a DVector<f64>,
    sens: &'a DMatrix<f64>,
}

impl<'a> SubstepStages<'a> {
    pub fn n_stages(&self) -> usize {
        self.tableau.n_stages()
    }

    /// Stage state `s_j`.
    pub fn state(&self, j: usize) -> &'a [f64] {
        &self.states.as_slice()[j * self.nx..(j + 1) * self.nx]
    }

    /// `d s_j / d(x0, u)`, shape `nx x (nx + nu)`.
    pub fn sens(&self, j: usize) -> DMatrixView<'a, f64> {
        self.sens.rows(j * self.nx, self.nx)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CostScratch {
    r: DVector<f64>,
    lr: DVector<f64>,
    jac: DMatrix<f64>,
    jt: DMatrix<f64>,
    ljt: DMatrix<f64>,
}

impl CostScratch {
    fn new(ny: usize, nw: usize) -> Self {
        Self {
            r: DVector::zeros(ny),
            lr: DVector::zeros(ny),
            jac: DMatrix::zeros(ny, nw),
            jt: DMatrix::zeros(ny, nw),
            ljt: DMatrix::zeros(ny, nw),
        }
    }

    fn len(&self) -> usize {
        self.r.len() + self.lr.len() + self.jac.len() + self.jt.len() + self.ljt.len()
    }
}

/// Per-instance integrator workspace. Not shared between threads while in
/// use; move it instead.
#[derive(Debug, Clone)]
pub struct IrkIntegrator {
    settings: IrkSettings,
    nx: usize,
    nu: usize,
    k: DVector<f64>,
    stages: DVector<f64>,
    resid: DVector<f64>,
    newton_mat: DMatrix<f64>,
    lu: Option<LU<f64, Dyn, Dyn>>,
    jac_x: Vec<DMatrix<f64>>,
    jac_xdot: Vec<DMatrix<f64>>,
    jac_u: Vec<DMatrix<f64>>,
    x: DVector<f64>,
    x_sens: DMatrix<f64>,
    dk: DMatrix<f64>,
    stage_sens: DMatrix<f64>,
    cost_scratch: Option<CostScratch>,
    counters: IrkCounters,
}

/// Work counters, cumulative since construction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IrkCounters {
    pub calls: usize,
    pub newton_iterations: usize,
    pub factorizations: usize,
}

impl IrkIntegrator {
    pub fn new(settings: IrkSettings, nx: usize, nu: usize) -> Result<Self> {
        settings.validate()?;
        let s = settings.tableau.n_stages();
        let nw = nx + nu;
        Ok(Self {
            nx,
            nu,
            k: DVector::zeros(s * nx),
            stages: DVector::zeros(s * nx),
            resid: DVector::zeros(s * nx),
            newton_mat: DMatrix::zeros(s * nx, s * nx),
            lu: None,
            jac_x: vec![DMatrix::zeros(nx, nx); s],
            jac_xdot: vec![DMatrix::zeros(nx, nx); s],
            jac_u: vec![DMatrix::zeros(nx, nu); s],
            x: DVector::zeros(nx),
            x_sens: DMatrix::zeros(nx, nw),
            dk: DMatrix::zeros(s * nx, nw),
            stage_sens: DMatrix::zeros(s * nx, nw),
            cost_scratch: None,
            counters: IrkCounters::default(),
            settings,
        })
    }

    pub fn settings(&self) -> &IrkSettings {
        &self.settings
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn counters(&self) -> IrkCounters {
        self.counters
    }

    /// Number of `f64` slots held by the workspace. Depends on
    /// `(nx, nu, ny, n_stages)` only.
    pub fn workspace_len(&self) -> usize {
        let mats = |v: &Vec<DMatrix<f64>>| v.iter().map(|m| m.len()).sum::<usize>();
        self.k.len()
            + self.stages.len()
            + self.resid.len()
            + 2 * self.newton_mat.len()
            + mats(&self.jac_x)
            + mats(&self.jac_xdot)
            + mats(&self.jac_u)
            + self.x.len()
            + self.x_sens.len()
            + self.dk.len()
            + self.stage_sens.len()
            + self.cost_scratch.as_ref().map_or(0, |c| c.len())
    }

    fn check_dims(&self, model: &dyn DynamicsModel, x0: &[f64], u: &[f64]) -> Result<()> {
        let checks = [
            ("model nx", self.nx, model.nx()),
            ("model nu", self.nu, model.nu()),
            ("initial state", self.nx, x0.len()),
            ("control", self.nu, u.len()),
        ];
        for (context, expected, got) in checks {
            if expected != got {
                return Err(Error::DimensionMismatch {
                    context,
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    /// Integrates `[t0, t0 + dt]` with constant control `u`, writing the end
    /// state and `d x_next / d(x0, u)` into `out.x_next` / `out.sens`, and
    /// calling `visit` once per substep with the converged stages.
    pub fn step_with_sens<F>(
        &mut self,
        model: &dyn DynamicsModel,
        t0: f64,
        dt: f64,
        x0: &[f64],
        u: &[f64],
        out: &mut StepOutput,
        mut visit: F,
    ) -> Result<()>
    where
        F: FnMut(&SubstepStages<'_>) -> Result<()>,
    {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("interval length must be > 0, got {dt}")));
        }
        self.check_dims(model, x0, u)?;
        self.counters.calls += 1;

        let nx = self.nx;
        let nu = self.nu;
        let n_stages = self.settings.tableau.n_stages();
        let h = dt / self.settings.n_steps as f64;

        self.x.as_mut_slice().copy_from_slice(x0);
        self.x_sens.fill(0.0);
        self.x_sens.view_mut((0, 0), (nx, nx)).fill_with_identity();
        // Stage derivatives start from zero on every call so that repeated
        // calls are bit-identical; later substeps reuse the previous ones.
        self.k.fill(0.0);
        self.lu = None;

        for step in 0..self.settings.n_steps {
            let t = t0 + step as f64 * h;
            self.solve_stages(model, t, h, u)?;

            // Stage Jacobian at the converged point, reused for the next
            // substep's Newton iterations.
            self.assemble_newton_matrix(model, t, h, u);
            self.factorize()?;

            // dK/dw = -M^{-1} (J_x,j dx/dw + [0 | J_u,j])
            for j in 0..n_stages {
                let mut block = self.dk.rows_mut(j * nx, nx);
                block.gemm(1.0, &self.jac_x[j], &self.x_sens, 0.0);
                let mut cols = block.columns_mut(nx, nu);
                cols += &self.jac_u[j];
            }
            let lu = self.lu.as_ref().expect("factorized above");
            if !lu.solve_mut(&mut self.dk) {
                return Err(Error::SingularStageJacobian);
            }
            self.dk.neg_mut();

            let a = self.settings.tableau.a();
            for j in 0..n_stages {
                let mut block = self.stage_sens.rows_mut(j * nx, nx);
                block.copy_from(&self.x_sens);
                for l in 0..n_stages {
                    let coeff = h * a[(j, l)];
                    if coeff != 0.0 {
                        block.zip_apply(&self.dk.rows(l * nx, nx), |d, v| *d += coeff * v);
                    }
                }
            }

            let stages = SubstepStages {
                t,
                h,
                u,
                tableau: &self.settings.tableau,
                nx,
                states: &self.stages,
                sens: &self.stage_sens,
            };
            visit(&stages)?;

            let b = self.settings.tableau.b();
            for j in 0..n_stages {
                let coeff = h * b[j];
                self.x_sens.zip_apply(&self.dk.rows(j * nx, nx), |d, v| *d += coeff * v);
                self.x.axpy(coeff, &self.k.rows(j * nx, nx), 1.0);
            }
        }

        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("integrator end state"));
        }
        out.x_next.copy_from(&self.x);
        out.sens.copy_from(&self.x_sens);
        Ok(())
    }

    /// Integrates the dynamics and, when `cost` is given, the GNRK cost
    /// terms over the interval. `out` is fully overwritten.
    pub fn integrate_into(
        &mut self,
        model: &dyn DynamicsModel,
        cost: Option<&ResidualCost>,
        t0: f64,
        dt: f64,
        x0: &[f64],
        u: &[f64],
        out: &mut StepOutput,
    ) -> Result<()> {
        out.reset_cost();
        match cost {
            None => self.step_with_sens(model, t0, dt, x0, u, out, |_| Ok(())),
            Some(cost) => {
                let nw = self.nx + self.nu;
                let fits = matches!(&self.cost_scratch, Some(c) if c.r.len() == cost.ny() && c.jac.ncols() == nw);
                if !fits {
                    self.cost_scratch = Some(CostScratch::new(cost.ny(), nw));
                }
                let mut scratch = self.cost_scratch.take().expect("allocated above");
                let mut acc = CostAccumulator {
                    cost: 0.0,
                    grad: std::mem::replace(&mut out.grad, DVector::zeros(0)),
                    hess: std::mem::replace(&mut out.hess, DMatrix::zeros(0, 0)),
                };
                let res = self.step_with_sens(model, t0, dt, x0, u, out, |stages| {
                    accumulate_gnrk(cost, stages, &mut acc, &mut scratch)
                });
                self.cost_scratch = Some(scratch);
                out.cost = acc.cost;
                out.grad = acc.grad;
                out.hess = acc.hess;
                res
            }
        }
    }

    /// Allocating convenience wrapper around [`Self::integrate_into`].
    pub fn integrate(
        &mut self,
        model: &dyn DynamicsModel,
        cost: Option<&ResidualCost>,
        t0: f64,
        dt: f64,
        x0: &[f64],
        u: &[f64],
    ) -> Result<StepOutput> {
        let mut out = StepOutput::zeros(self.nx, self.nu);
        self.integrate_into(model, cost, t0, dt, x0, u, &mut out)?;
        Ok(out)
    }

    fn update_stage_residual(&mut self, model: &dyn DynamicsModel, t: f64, h: f64, u: &[f64]) -> f64 {
        let nx = self.nx;
        let tab = &self.settings.tableau;
        let (a, c) = (tab.a(), tab.c());
        let n_stages = tab.n_stages();
        for j in 0..n_stages {
            let mut sj = self.stages.rows_mut(j * nx, nx);
            sj.copy_from(&self.x);
            for l in 0..n_stages {
                let coeff = h * a[(j, l)];
                if coeff != 0.0 {
                    sj.axpy(coeff, &self.k.rows(l * nx, nx), 1.0);
                }
            }
        }
        for j in 0..n_stages {
            let range = j * nx..(j + 1) * nx;
            model.eval(
                t + c[j] * h,
                &self.stages.as_slice()[range.clone()],
                &self.k.as_slice()[range.clone()],
                u,
                &mut self.resid.as_mut_slice()[range],
            );
        }
        self.resid.amax()
    }

    fn assemble_newton_matrix(&mut self, model: &dyn DynamicsModel, t: f64, h: f64, u: &[f64]) {
        let nx = self.nx;
        let tab = &self.settings.tableau;
        let (a, c) = (tab.a(), tab.c());
        let n_stages = tab.n_stages();
        for j in 0..n_stages {
            let range = j * nx..(j + 1) * nx;
            model.jacobians(
                t + c[j] * h,
                &self.stages.as_slice()[range.clone()],
                &self.k.as_slice()[range],
                u,
                &mut self.jac_x[j],
                &mut self.jac_xdot[j],
                &mut self.jac_u[j],
            );
        }
        for j in 0..n_stages {
            for l in 0..n_stages {
                let mut block = self.newton_mat.view_mut((j * nx, l * nx), (nx, nx));
                block.copy_from(&self.jac_x[j]);
                block *= h * a[(j, l)];
                if j == l {
                    block += &self.jac_xdot[j];
                }
            }
        }
    }

    fn factorize(&mut self) -> Result<()> {
        self.counters.factorizations += 1;
        let lu = self.newton_mat.clone().lu();
        if !lu.is_invertible() {
            self.lu = None;
            return Err(Error::SingularStageJacobian);
        }
        self.lu = Some(lu);
        Ok(())
    }

    /// Simplified Newton on the stage equations. The iteration matrix is the
    /// one left over from the previous substep when available; it is
    /// rebuilt when the residual fails to drop tenfold.
    fn solve_stages(&mut self, model: &dyn DynamicsModel, t: f64, h: f64, u: &[f64]) -> Result<()> {
        let tol = self.settings.newton_tol;
        let max_iter = self.settings.newton_max_iter;
        let mut prev = f64::INFINITY;
        let mut iter = 0;
        loop {
            let norm = self.update_stage_residual(model, t, h, u);
            if !norm.is_finite() {
                return Err(Error::NewtonNonConvergence {
                    residual: norm,
                    iterations: iter,
                });
            }
            // relative to the stage derivative size; an absolute 1e-12 is
            // below rounding once |k| reaches the hundreds
            if norm <= tol * self.k.amax().max(1.0) {
                return Ok(());
            }
            if iter == max_iter {
                return Err(Error::NewtonNonConvergence {
                    residual: norm,
                    iterations: iter,
                });
            }
            if self.lu.is_none() || norm > 0.1 * prev {
                self.assemble_newton_matrix(model, t, h, u);
                self.factorize()?;
            }
            let lu = self.lu.as_ref().expect("factorized above");
            if !lu.solve_mut(&mut self.resid) {
                return Err(Error::SingularStageJacobian);
            }
            self.k -= &self.resid;
            self.counters.newton_iterations += 1;
            prev = norm;
            iter += 1;
        }
    }
}

/// Running GNRK sums for one shooting interval.
#[derive(Debug, Clone)]
pub struct CostAccumulator {
    pub cost: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl CostAccumulator {
    pub fn zeros(nw: usize) -> Self {
        Self {
            cost: 0.0,
            grad: DVector::zeros(nw),
            hess: DMatrix::zeros(nw, nw),
        }
    }
}

/// Adds one substep's GNRK contributions to `acc`:
///
/// ```text
/// L += h sum_j b_j/2 ||r_j||_W^2
/// g += h sum_j b_j Jt_j^T W r_j
/// H += h sum_j b_j Jt_j^T W Jt_j,     Jt_j = dr/d(s, u) * [ds_j/dw; 0 I]
/// ```
pub fn gnrk_cost_step(cost: &ResidualCost, stages: &SubstepStages<'_>, acc: &mut CostAccumulator) -> Result<()> {
    let nw = stages.sens(0).ncols();
    let mut scratch = CostScratch::new(cost.ny(), nw);
    accumulate_gnrk(cost, stages, acc, &mut scratch)
}

fn accumulate_gnrk(
    cost: &ResidualCost,
    stages: &SubstepStages<'_>,
    acc: &mut CostAccumulator,
    scratch: &mut CostScratch,
) -> Result<()> {
    let nx = stages.nx;
    let nw = stages.sens(0).ncols();
    let nu = nw - nx;
    if cost.nx() != nx || cost.nu() != nu {
        return Err(Error::DimensionMismatch {
            context: "cost dimensions vs integrator",
            expected: nw,
            got: cost.nx() + cost.nu(),
        });
    }
    if acc.grad.len() != nw || acc.hess.nrows() != nw {
        return Err(Error::DimensionMismatch {
            context: "cost accumulator",
            expected: nw,
            got: acc.grad.len(),
        });
    }
    let b = stages.tableau.b();
    for j in 0..stages.n_stages() {
        let weight = stages.h * b[j];
        if weight == 0.0 {
            continue;
        }
        let s_j = stages.state(j);
        cost.residual().eval(s_j, stages.u, scratch.r.as_mut_slice());
        cost.residual().jacobian(s_j, stages.u, &mut scratch.jac);
        scratch
            .jt
            .gemm(1.0, &scratch.jac.columns(0, nx), &stages.sens(j), 0.0);
        let mut ju = scratch.jt.columns_mut(nx, nu);
        ju += &scratch.jac.columns(nx, nu);
        add_weighted_gn_terms(cost, weight, scratch, acc);
    }
    Ok(())
}

// Uses L^T r and L^T Jt so that the Hessian update is a Gram product and
// bitwise symmetric.
fn add_weighted_gn_terms(cost: &ResidualCost, weight: f64, scratch: &mut CostScratch, acc: &mut CostAccumulator) {
    let root = cost.weight_root_t();
    scratch.lr.gemv(1.0, root, &scratch.r, 0.0);
    scratch.ljt.gemm(1.0, root, &scratch.jt, 0.0);
    acc.cost += 0.5 * weight * scratch.lr.norm_squared();
    acc.grad.gemv_tr(weight, &scratch.ljt, &scratch.lr, 1.0);
    acc.hess.gemm_tr(weight, &scratch.ljt, &scratch.ljt, 1.0);
}

/// Shooting-node cost terms `(dt l(x, u), dt J^T W r, dt J^T W J)`.
pub fn sn_cost_terms(cost: &ResidualCost, dt: f64, x: &[f64], u: &[f64]) -> Result<CostAccumulator> {
    let nw = cost.nx() + cost.nu();
    let mut acc = CostAccumulator::zeros(nw);
    let mut scratch = CostScratch::new(cost.ny(), nw);
    sn_cost_terms_into(cost, dt, x, u, &mut acc, &mut scratch)?;
    Ok(acc)
}

pub(crate) fn sn_cost_terms_into(
    cost: &ResidualCost,
    dt: f64,
    x: &[f64],
    u: &[f64],
    acc: &mut CostAccumulator,
    scratch: &mut CostScratch,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("interval length must be > 0, got {dt}")));
    }
    if x.len() != cost.nx() || u.len() != cost.nu() {
        return Err(Error::DimensionMismatch {
            context: "shooting-node cost input",
            expected: cost.nx() + cost.nu(),
            got: x.len() + u.len(),
        });
    }
    acc.cost = 0.0;
    acc.grad.fill(0.0);
    acc.hess.fill(0.0);
    cost.residual().eval(x, u, scratch.r.as_mut_slice());
    cost.residual().jacobian(x, u, &mut scratch.jac);
    scratch.jt.copy_from(&scratch.jac);
    add_weighted_gn_terms(cost, dt, scratch, acc);
    Ok(())
}

/// Scratch buffers for [`sn_cost_terms_into`], owned by the caller.
#[derive(Debug, Clone)]
pub struct SnScratch(CostScratch);

impl SnScratch {
    pub fn new(cost: &ResidualCost) -> Self {
        Self(CostScratch::new(cost.ny(), cost.nx() + cost.nu()))
    }

    pub(crate) fn inner(&mut self) -> &mut CostScratch {
        &mut self.0
    }
}
