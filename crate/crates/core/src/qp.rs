//! Structured QP solver for [`QpData`]: a primal-dual interior-point method
//! (Mehrotra predictor-corrector) whose Newton systems are solved by a
//! Riccati recursion over the horizon.
//!
//! Sign convention of the multipliers (all step coordinates):
//!
//! ```text
//! L = f + lam_0^T (x0_fix - x0 - dx_0)
//!       + sum_n lam_{n+1}^T (A_n dx_n + B_n du_n + c_n - dx_{n+1})
//!       - z_lo_n^T (du_n - u_lo_n) - z_hi_n^T (u_hi_n - du_n)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ocp::QpData;

const FRACTION_TO_BOUNDARY: f64 = 0.995;
const RUU_REGULARIZATION: f64 = 1e-9;
const NEIGHBORHOOD: f64 = 1e-2;
const BACKTRACK_FACTOR: f64 = 0.8;
const MAX_BACKTRACKS: usize = 40;
const MIN_CORRECTED_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Termination tolerance on the infinity norm of the KKT residual,
    /// scaled by `max(1, largest magnitude in the QP data)` because an
    /// absolute 1e-10 is below rounding for penalty-sized Hessians.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub lam: Vec<DVector<f64>>,
    pub z_lo: Vec<DVector<f64>>,
    pub z_hi: Vec<DVector<f64>>,
    /// Infinity norm of the KKT residual of the returned point.
    pub kkt_residual: f64,
    /// Scaled tolerance the residual was tested against.
    pub tolerance: f64,
    pub iterations: usize,
}

/// Components of the KKT residual, each an infinity norm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub equality: f64,
    /// Bound violation plus negative multipliers.
    pub inequality: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.complementarity)
    }
}

fn check_shapes(qp: &QpData, x0_fix: &DVector<f64>) -> Result<()> {
    let (nx, nu) = (qp.nx(), qp.nu());
    if x0_fix.len() != nx {
        return Err(Error::DimensionMismatch {
            context: "QP initial state",
            expected: nx,
            got: x0_fix.len(),
        });
    }
    for (n, s) in qp.stages.iter().enumerate() {
        let ok = s.hess.shape() == (nx + nu, nx + nu)
            && s.grad.len() == nx + nu
            && s.a.shape() == (nx, nx)
            && s.b.shape() == (nx, nu)
            && s.c.len() == nx
            && s.u_lo.len() == nu
            && s.u_hi.len() == nu;
        if !ok {
            return Err(Error::DimensionMismatch {
                context: "QP stage data",
                expected: nx + nu,
                got: s.grad.len(),
            }
            .at_stage(n));
        }
        if s.u_lo.iter().zip(s.u_hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("QP bounds must satisfy lower <= upper".into()).at_stage(n));
        }
    }
    if qp.terminal_hess.shape() != (nx, nx) || qp.terminal_grad.len() != nx {
        return Err(Error::DimensionMismatch {
            context: "QP terminal data",
            expected: nx,
            got: qp.terminal_grad.len(),
        });
    }
    Ok(())
}

/// Distance from the bounds at which the interior-point iteration starts.
fn bound_margin(lo: f64, hi: f64) -> f64 {
    if lo.is_finite() && hi.is_finite() {
        (0.25 * (hi - lo)).min(1.0)
    } else {
        1.0
    }
}

/// Largest magnitude in the cost and dynamics data.
fn data_scale(qp: &QpData) -> f64 {
    let stages = qp.stages.iter().map(|s| {
        s.hess
            .amax()
            .max(s.grad.amax())
            .max(s.a.amax())
            .max(s.b.amax())
            .max(s.c.amax())
    });
    stages
        .chain([qp.terminal_hess.amax(), qp.terminal_grad.amax()])
        .fold(0.0, f64::max)
}

/// Recomputes the KKT residual of a candidate QP solution from scratch.
pub fn kkt_residuals(qp: &QpData, x0_fix: &DVector<f64>, sol: &QpSolution) -> KktResiduals {
    let (nx, nu, n_int) = (qp.nx(), qp.nu(), qp.n_intervals());
    let mut res = KktResiduals::default();
    let amax = |v: &DVector<f64>| v.amax();
    res.equality = amax(&(&sol.dx[0] - (x0_fix - &qp.x0)));
    for n in 0..n_int {
        let s = &qp.stages[n];
        let (x, u) = (&sol.dx[n], &sol.du[n]);
        let hxx = s.hess.view((0, 0), (nx, nx));
        let hxu = s.hess.view((0, nx), (nx, nu));
        let hux = s.hess.view((nx, 0), (nu, nx));
        let huu = s.hess.view((nx, nx), (nu, nu));
        let rx = hxx * x + hxu * u + s.grad.rows(0, nx) - &sol.lam[n] + s.a.tr_mul(&sol.lam[n + 1]);
        let ru = hux * x + huu * u + s.grad.rows(nx, nu) + s.b.tr_mul(&sol.lam[n + 1]) - &sol.z_lo[n] + &sol.z_hi[n];
        res.stationarity = res.stationarity.max(rx.amax()).max(ru.amax());
        let dyn_res = &s.a * x + &s.b * u + &s.c - &sol.dx[n + 1];
        res.equality = res.equality.max(dyn_res.amax());
        for i in 0..nu {
            let (zl, zh) = (sol.z_lo[n][i], sol.z_hi[n][i]);
            if s.u_lo[i].is_finite() {
                let slack = u[i] - s.u_lo[i];
                res.inequality = res.inequality.max(-slack).max(-zl);
                res.complementarity = res.complementarity.max((zl * slack).abs());
            } else {
                res.inequality = res.inequality.max(zl.abs());
            }
            if s.u_hi[i].is_finite() {
                let slack = s.u_hi[i] - u[i];
                res.inequality = res.inequality.max(-slack).max(-zh);
                res.complementarity = res.complementarity.max((zh * slack).abs());
            } else {
                res.inequality = res.inequality.max(zh.abs());
            }
        }
    }
    let xn = &sol.dx[n_int];
    let rn = &qp.terminal_hess * xn + &qp.terminal_grad - &sol.lam[n_int];
    res.stationarity = res.stationarity.max(rn.amax());
    res
}

#[derive(Debug, Clone)]
struct StageWork {
    p: DMatrix<f64>,
    pv: DVector<f64>,
    k_mat: DMatrix<f64>,
    k_vec: DVector<f64>,
    sux: DMatrix<f64>,
    ruu_l: DMatrix<f64>,
    // diagonal barrier term z/t added to Huu
    sigma: DVector<f64>,
    // right-hand side of the LQ subproblem: state and control gradients
    // (the latter with and without barrier terms) and dynamics residual
    gx: DVector<f64>,
    gu: DVector<f64>,
    ru: DVector<f64>,
    c: DVector<f64>,
    // bound slacks and multipliers; entries for infinite bounds stay zero
    t_lo: DVector<f64>,
    t_hi: DVector<f64>,
    z_lo: DVector<f64>,
    z_hi: DVector<f64>,
    dt_lo: DVector<f64>,
    dt_hi: DVector<f64>,
    dz_lo: DVector<f64>,
    dz_hi: DVector<f64>,
    rc_lo: DVector<f64>,
    rc_hi: DVector<f64>,
}

impl StageWork {
    fn new(nx: usize, nu: usize) -> Self {
        let v = || DVector::zeros(nu);
        Self {
            p: DMatrix::zeros(nx, nx),
            pv: DVector::zeros(nx),
            k_mat: DMatrix::zeros(nu, nx),
            k_vec: v(),
            sux: DMatrix::zeros(nu, nx),
            ruu_l: DMatrix::zeros(nu, nu),
            sigma: v(),
            gx: DVector::zeros(nx),
            gu: v(),
            ru: v(),
            c: DVector::zeros(nx),
            t_lo: v(),
            t_hi: v(),
            z_lo: v(),
            z_hi: v(),
            dt_lo: v(),
            dt_hi: v(),
            dz_lo: v(),
            dz_hi: v(),
            rc_lo: v(),
            rc_hi: v(),
        }
    }
}

/// Primal trajectory used inside the interior-point loop.
#[derive(Debug, Clone)]
struct Primal {
    x: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
    lam: Vec<DVector<f64>>,
}

impl Primal {
    fn zeros(nx: usize, nu: usize, n: usize) -> Self {
        Self {
            x: vec![DVector::zeros(nx); n + 1],
            u: vec![DVector::zeros(nu); n],
            lam: vec![DVector::zeros(nx); n + 1],
        }
    }
}

/// Reusable solver; buffers are resized when the QP shape changes.
#[derive(Debug, Clone, Default)]
pub struct OcpQpSolver {
    options: QpOptions,
    work: Vec<StageWork>,
    p_terminal: DMatrix<f64>,
    pv_terminal: DVector<f64>,
    qn: DVector<f64>,
    e0: DVector<f64>,
    shape: (usize, usize, usize),
}

impl OcpQpSolver {
    pub fn new(options: QpOptions) -> Self {
        Self {
            options,
            ..Self::default()
        }
    }

    pub fn options(&self) -> &QpOptions {
        &self.options
    }

    fn ensure_shape(&mut self, nx: usize, nu: usize, n: usize) {
        if self.shape != (nx, nu, n) || self.work.len() != n {
            self.work = (0..n).map(|_| StageWork::new(nx, nu)).collect();
            self.p_terminal = DMatrix::zeros(nx, nx);
            self.pv_terminal = DVector::zeros(nx);
            self.qn = DVector::zeros(nx);
            self.e0 = DVector::zeros(nx);
            self.shape = (nx, nu, n);
        }
    }

    /// Backward Riccati sweep of the matrix part; uses `sigma` of each stage.
    fn factorize(&mut self, qp: &QpData) -> Result<()> {
        let (nx, nu) = (qp.nx(), qp.nu());
        let n_int = qp.n_intervals();
        self.p_terminal.copy_from(&qp.terminal_hess);
        for n in (0..n_int).rev() {
            let s = &qp.stages[n];
            let (head, tail) = self.work.split_at_mut(n + 1);
            let w = &mut head[n];
            let p_next = if n + 1 == n_int { &self.p_terminal } else { &tail[0].p };
            let pa = p_next * &s.a;
            let pb = p_next * &s.b;
            let mut ruu = s.hess.view((nx, nx), (nu, nu)).into_owned() + s.b.tr_mul(&pb);
            for i in 0..nu {
                ruu[(i, i)] += w.sigma[i];
            }
            ruu = 0.5 * (&ruu + ruu.transpose());
            w.sux = s.hess.view((nx, 0), (nu, nx)) + s.b.tr_mul(&pa);
            let chol = match ruu.clone().cholesky() {
                Some(c) => c,
                None => {
                    for i in 0..nu {
                        ruu[(i, i)] += RUU_REGULARIZATION;
                    }
                    ruu.cholesky().ok_or(Error::NonConvexBlock { stage: n })?
                }
            };
            w.k_mat.copy_from(&w.sux);
            chol.solve_mut(&mut w.k_mat);
            w.k_mat.neg_mut();
            w.ruu_l.copy_from(&chol.l());
            let mut p = s.hess.view((0, 0), (nx, nx)) + s.a.tr_mul(&pa);
            p.gemm_tr(1.0, &w.sux, &w.k_mat, 1.0);
            w.p = 0.5 * (&p + p.transpose());
        }
        Ok(())
    }

    /// Backward vector sweep and forward rollout of the LQ subproblem with
    /// gradients `gx`, `gu`, `qn`, affine terms `c` and initial value `e0`
    /// from the workspace.
    fn solve_factorized(&mut self, qp: &QpData, out: &mut Primal) {
        let n_int = qp.n_intervals();
        self.pv_terminal.copy_from(&self.qn);
        for n in (0..n_int).rev() {
            let s = &qp.stages[n];
            let (head, tail) = self.work.split_at_mut(n + 1);
            let w = &mut head[n];
            let (p_next, pv_next) = if n + 1 == n_int {
                (&self.p_terminal, &self.pv_terminal)
            } else {
                (&tail[0].p, &tail[0].pv)
            };
            let carry = p_next * &w.c + pv_next;
            let ru = &w.gu + s.b.tr_mul(&carry);
            // k = -Ruu^{-1} ru via the stored factor
            let l = &w.ruu_l;
            let y = l.solve_lower_triangular(&ru).expect("nonsingular factor");
            let k = l.tr_solve_lower_triangular(&y).expect("nonsingular factor");
            w.k_vec = -k;
            let mut pv = &w.gx + s.a.tr_mul(&carry);
            pv.gemv_tr(1.0, &w.sux, &w.k_vec, 1.0);
            w.pv = pv;
        }
        out.x[0].copy_from(&self.e0);
        for n in 0..n_int {
            let s = &qp.stages[n];
            let w = &self.work[n];
            let u = &w.k_mat * &out.x[n] + &w.k_vec;
            let x_next = &s.a * &out.x[n] + &s.b * &u + &w.c;
            out.lam[n] = &w.p * &out.x[n] + &w.pv;
            out.u[n] = u;
            out.x[n + 1] = x_next;
        }
        out.lam[n_int] = &self.p_terminal * &out.x[n_int] + &self.pv_terminal;
    }

    /// Solves the QP for the initial state `x0_fix`.
    pub fn solve(&mut self, qp: &QpData, x0_fix: &DVector<f64>) -> Result<QpSolution> {
        check_shapes(qp, x0_fix)?;
        if !(self.options.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("QP tolerance must be > 0, got {}", self.options.tol)));
        }
        let tol = self.options.tol * data_scale(qp).max(1.0);
        let (nx, nu, n_int) = (qp.nx(), qp.nu(), qp.n_intervals());
        self.ensure_shape(nx, nu, n_int);
        let n_bounds: usize = qp
            .stages
            .iter()
            .map(|s| {
                s.u_lo.iter().filter(|v| v.is_finite()).count() + s.u_hi.iter().filter(|v| v.is_finite()).count()
            })
            .sum();

        let mut cur = Primal::zeros(nx, nu, n_int);
        let mut dir = Primal::zeros(nx, nu, n_int);

        // Initial point: Riccati solve with unit barrier curvature on bounded
        // components, then slacks pushed away from zero.
        for w in self.work.iter_mut() {
            w.t_lo.fill(0.0);
            w.t_hi.fill(0.0);
            w.z_lo.fill(0.0);
            w.z_hi.fill(0.0);
            w.rc_lo.fill(0.0);
            w.rc_hi.fill(0.0);
        }
        for (s, w) in qp.stages.iter().zip(self.work.iter_mut()) {
            for i in 0..nu {
                let bounded = s.u_lo[i].is_finite() || s.u_hi[i].is_finite();
                w.sigma[i] = if bounded { 1.0 } else { 0.0 };
            }
        }
        self.compute_residuals(qp, x0_fix, &cur);
        for w in self.work.iter_mut() {
            w.gu.copy_from(&w.ru);
        }
        self.factorize(qp)?;
        self.solve_factorized(qp, &mut cur);
        if n_bounds == 0 {
            return Ok(self.finish(qp, x0_fix, cur, 1, tol));
        }
        // Controls are moved strictly inside their box so that the slacks
        // equal the bound distances exactly; from a far-outside start the
        // infeasible Newton step would be cut to nearly zero.
        for (n, s) in qp.stages.iter().enumerate() {
            for i in 0..nu {
                let (lo, hi) = (s.u_lo[i], s.u_hi[i]);
                let margin = bound_margin(lo, hi);
                if margin > 0.0 {
                    let u = &mut cur.u[n][i];
                    *u = u.max(lo + margin).min(hi - margin);
                }
            }
        }
        // Bound multipliers start at the size of the control gradient so the
        // barrier curvature matches the scale of the problem.
        self.compute_residuals(qp, x0_fix, &cur);
        for (n, s) in qp.stages.iter().enumerate() {
            let w = &mut self.work[n];
            for i in 0..nu {
                let (lo, hi) = (s.u_lo[i], s.u_hi[i]);
                let margin = bound_margin(lo, hi).max(f64::MIN_POSITIVE.sqrt());
                let (u, z) = (cur.u[n][i], w.ru[i].abs().max(1.0));
                if lo.is_finite() {
                    w.t_lo[i] = (u - lo).max(margin);
                    w.z_lo[i] = z;
                }
                if hi.is_finite() {
                    w.t_hi[i] = (hi - u).max(margin);
                    w.z_hi[i] = z;
                }
            }
        }

        for iter in 1..=self.options.max_iter {
            let mu = self.mean_complementarity(n_bounds);
            self.compute_residuals(qp, x0_fix, &cur);
            // Predictor
            for w in self.work.iter_mut() {
                for i in 0..nu {
                    w.rc_lo[i] = -w.t_lo[i] * w.z_lo[i];
                    w.rc_hi[i] = -w.t_hi[i] * w.z_hi[i];
                }
            }
            self.prepare_barrier(qp);
            self.factorize(qp)?;
            self.prepare_gradient(qp, &cur);
            self.newton_direction(qp, &cur, &mut dir);
            let alpha_aff = self.max_step().min(1.0);
            let mut mu_aff = 0.0;
            for w in &self.work {
                for i in 0..nu {
                    mu_aff += (w.t_lo[i] + alpha_aff * w.dt_lo[i]) * (w.z_lo[i] + alpha_aff * w.dz_lo[i]);
                    mu_aff += (w.t_hi[i] + alpha_aff * w.dt_hi[i]) * (w.z_hi[i] + alpha_aff * w.dz_hi[i]);
                }
            }
            mu_aff /= n_bounds as f64;
            let centering = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            // Corrector; the matrix factorization is reused.
            for (s, w) in qp.stages.iter().zip(self.work.iter_mut()) {
                for i in 0..nu {
                    if s.u_lo[i].is_finite() {
                        w.rc_lo[i] = centering * mu - w.t_lo[i] * w.z_lo[i] - w.dt_lo[i] * w.dz_lo[i];
                    }
                    if s.u_hi[i].is_finite() {
                        w.rc_hi[i] = centering * mu - w.t_hi[i] * w.z_hi[i] - w.dt_hi[i] * w.dz_hi[i];
                    }
                }
            }
            self.prepare_gradient(qp, &cur);
            self.newton_direction(qp, &cur, &mut dir);
            let mut alpha = self.central_step(n_bounds);
            if alpha < MIN_CORRECTED_STEP {
                // The second-order correction can pull the iterate out of the
                // central neighborhood; fall back to a pure centering step.
                for (s, w) in qp.stages.iter().zip(self.work.iter_mut()) {
                    for i in 0..nu {
                        if s.u_lo[i].is_finite() {
                            w.rc_lo[i] = mu - w.t_lo[i] * w.z_lo[i];
                        }
                        if s.u_hi[i].is_finite() {
                            w.rc_hi[i] = mu - w.t_hi[i] * w.z_hi[i];
                        }
                    }
                }
                self.prepare_gradient(qp, &cur);
                self.newton_direction(qp, &cur, &mut dir);
                alpha = self.central_step(n_bounds);
            }
            for n in 0..=n_int {
                cur.x[n].axpy(alpha, &dir.x[n], 1.0);
                cur.lam[n].axpy(alpha, &dir.lam[n], 1.0);
            }
            for n in 0..n_int {
                cur.u[n].axpy(alpha, &dir.u[n], 1.0);
                let w = &mut self.work[n];
                w.t_lo.axpy(alpha, &w.dt_lo, 1.0);
                w.t_hi.axpy(alpha, &w.dt_hi, 1.0);
                w.z_lo.axpy(alpha, &w.dz_lo, 1.0);
                w.z_hi.axpy(alpha, &w.dz_hi, 1.0);
            }
            let sol = self.finish(qp, x0_fix, cur.clone(), iter, tol);
            if sol.kkt_residual <= tol {
                return Ok(match self.polish(qp, x0_fix, &sol)? {
                    Some(polished) if polished.kkt_residual <= sol.kkt_residual => polished,
                    _ => sol,
                });
            }
        }
        let residual = self.finish(qp, x0_fix, cur, self.options.max_iter, tol).kkt_residual;
        Err(Error::QpMaxIterations {
            iterations: self.options.max_iter,
            residual,
        })
    }

    fn mean_complementarity(&self, n_bounds: usize) -> f64 {
        let total: f64 = self
            .work
            .iter()
            .map(|w| w.t_lo.dot(&w.z_lo) + w.t_hi.dot(&w.z_hi))
            .sum();
        total / n_bounds as f64
    }

    /// Residuals of stationarity and of the equality constraints at `cur`;
    /// they are the right-hand side of the Newton step.
    fn compute_residuals(&mut self, qp: &QpData, x0_fix: &DVector<f64>, cur: &Primal) {
        let (nx, nu, n_int) = (qp.nx(), qp.nu(), qp.n_intervals());
        self.e0 = x0_fix - &qp.x0 - &cur.x[0];
        for (n, (s, w)) in qp.stages.iter().zip(self.work.iter_mut()).enumerate() {
            let (x, u) = (&cur.x[n], &cur.u[n]);
            let hxx = s.hess.view((0, 0), (nx, nx));
            let hxu = s.hess.view((0, nx), (nx, nu));
            let hux = s.hess.view((nx, 0), (nu, nx));
            let huu = s.hess.view((nx, nx), (nu, nu));
            w.gx = hxx * x + hxu * u + s.grad.rows(0, nx) - &cur.lam[n] + s.a.tr_mul(&cur.lam[n + 1]);
            w.ru = hux * x + huu * u + s.grad.rows(nx, nu) + s.b.tr_mul(&cur.lam[n + 1]) - &w.z_lo + &w.z_hi;
            w.c = &s.a * x + &s.b * u + &s.c - &cur.x[n + 1];
        }
        self.qn = &qp.terminal_hess * &cur.x[n_int] + &qp.terminal_grad - &cur.lam[n_int];
    }

    fn prepare_barrier(&mut self, qp: &QpData) {
        for (s, w) in qp.stages.iter().zip(self.work.iter_mut()) {
            for i in 0..s.u_lo.len() {
                let mut sigma = 0.0;
                if s.u_lo[i].is_finite() {
                    sigma += w.z_lo[i] / w.t_lo[i];
                }
                if s.u_hi[i].is_finite() {
                    sigma += w.z_hi[i] / w.t_hi[i];
                }
                w.sigma[i] = sigma;
            }
        }
    }

    /// Eliminating the slack and bound-multiplier steps from the Newton
    /// system adds a term to the control gradient that depends on the
    /// complementarity target `rc`.
    fn prepare_gradient(&mut self, qp: &QpData, cur: &Primal) {
        for ((s, w), u) in qp.stages.iter().zip(self.work.iter_mut()).zip(&cur.u) {
            for i in 0..u.len() {
                let mut g = w.ru[i];
                if s.u_lo[i].is_finite() {
                    let (t, z) = (w.t_lo[i], w.z_lo[i]);
                    let rp = u[i] - s.u_lo[i] - t;
                    g += (z * rp - w.rc_lo[i]) / t;
                }
                if s.u_hi[i].is_finite() {
                    let (t, z) = (w.t_hi[i], w.z_hi[i]);
                    let rp = s.u_hi[i] - u[i] - t;
                    g += (w.rc_hi[i] - z * rp) / t;
                }
                w.gu[i] = g;
            }
        }
    }

    /// Solves the LQ subproblem for the primal-dual step `dir` and recovers
    /// the slack and bound-multiplier steps.
    fn newton_direction(&mut self, qp: &QpData, cur: &Primal, dir: &mut Primal) {
        self.solve_factorized(qp, dir);
        for (n, s) in qp.stages.iter().enumerate() {
            let w = &mut self.work[n];
            for i in 0..s.u_lo.len() {
                let du = dir.u[n][i];
                let u = cur.u[n][i];
                if s.u_lo[i].is_finite() {
                    let rp = u - s.u_lo[i] - w.t_lo[i];
                    w.dt_lo[i] = du + rp;
                    w.dz_lo[i] = (w.rc_lo[i] - w.z_lo[i] * w.dt_lo[i]) / w.t_lo[i];
                } else {
                    w.dt_lo[i] = 0.0;
                    w.dz_lo[i] = 0.0;
                }
                if s.u_hi[i].is_finite() {
                    let rp = s.u_hi[i] - u - w.t_hi[i];
                    w.dt_hi[i] = -du + rp;
                    w.dz_hi[i] = (w.rc_hi[i] - w.z_hi[i] * w.dt_hi[i]) / w.t_hi[i];
                } else {
                    w.dt_hi[i] = 0.0;
                    w.dz_hi[i] = 0.0;
                }
            }
        }
    }

    /// Fraction-to-boundary step, shortened until the smallest bounded pair
    /// keeps `t * z >= c * mean(t * z)`. `c` is `NEIGHBORHOOD`, or half the
    /// current ratio when the iterate is already less central than that.
    fn central_step(&self, n_bounds: usize) -> f64 {
        let mut alpha = (FRACTION_TO_BOUNDARY * self.max_step()).min(1.0);
        let centrality = |alpha: f64| {
            let (mut total, mut smallest) = (0.0, f64::INFINITY);
            for w in &self.work {
                for i in 0..w.t_lo.len() {
                    let pairs = [
                        (w.t_lo[i], w.z_lo[i], w.dt_lo[i], w.dz_lo[i]),
                        (w.t_hi[i], w.z_hi[i], w.dt_hi[i], w.dz_hi[i]),
                    ];
                    for (t, z, dt, dz) in pairs {
                        // unbounded components have t = 0 throughout
                        if t > 0.0 {
                            let tz = (t + alpha * dt) * (z + alpha * dz);
                            total += tz;
                            smallest = smallest.min(tz);
                        }
                    }
                }
            }
            smallest / (total / n_bounds as f64)
        };
        let threshold = NEIGHBORHOOD.min(0.5 * centrality(0.0));
        for _ in 0..MAX_BACKTRACKS {
            if centrality(alpha) >= threshold {
                break;
            }
            alpha *= BACKTRACK_FACTOR;
        }
        alpha
    }

    /// Largest step, capped at 1/0.995, keeping slacks and multipliers positive.
    fn max_step(&self) -> f64 {
        let mut alpha: f64 = 1.0 / FRACTION_TO_BOUNDARY;
        let mut limit = |v: f64, dv: f64| {
            if dv < 0.0 {
                alpha = alpha.min(-v / dv);
            }
        };
        for w in &self.work {
            for i in 0..w.t_lo.len() {
                limit(w.t_lo[i], w.dt_lo[i]);
                limit(w.t_hi[i], w.dt_hi[i]);
                limit(w.z_lo[i], w.dz_lo[i]);
                limit(w.z_hi[i], w.dz_hi[i]);
            }
        }
        alpha
    }

    /// Re-solves with the bounds identified as active (`slack < z`) held
    /// fixed and the others dropped, then recovers the bound multipliers
    /// from stationarity. At termination the interior point still sits at
    /// slack `~ tol / z` from bounds with small multipliers; the polished
    /// point lies on them. `None` when the guessed active set is not
    /// primal-dual feasible.
    fn polish(&mut self, qp: &QpData, x0_fix: &DVector<f64>, sol: &QpSolution) -> Result<Option<QpSolution>> {
        let (nx, nu, n_int) = (qp.nx(), qp.nu(), qp.n_intervals());
        // fixed[n][i] = value the control is held at
        let mut fixed = vec![vec![None; nu]; n_int];
        let mut reduced = qp.clone();
        for (n, s) in reduced.stages.iter_mut().enumerate() {
            for i in 0..nu {
                let u = sol.du[n][i];
                let lo = (u - s.u_lo[i] < self.work[n].z_lo[i]).then_some(s.u_lo[i]);
                let hi = (s.u_hi[i] - u < self.work[n].z_hi[i]).then_some(s.u_hi[i]);
                let value = match (lo, hi) {
                    (Some(l), Some(h)) => Some(if u - l <= h - u { l } else { h }),
                    (l, h) => l.or(h),
                };
                if let Some(v) = value {
                    fixed[n][i] = Some(v);
                    let col = s.hess.column(nx + i).into_owned();
                    s.grad.axpy(v, &col, 1.0);
                    s.hess.column_mut(nx + i).fill(0.0);
                    s.hess.row_mut(nx + i).fill(0.0);
                    s.hess[(nx + i, nx + i)] = 1.0;
                    s.grad[nx + i] = -v;
                    let b_col = s.b.column(i).into_owned();
                    s.c.axpy(v, &b_col, 1.0);
                    s.b.column_mut(i).fill(0.0);
                }
            }
            s.u_lo.fill(f64::NEG_INFINITY);
            s.u_hi.fill(f64::INFINITY);
        }
        let mut inner = OcpQpSolver::new(self.options);
        let eq = inner.solve(&reduced, x0_fix)?;

        let mut z_lo = vec![DVector::zeros(nu); n_int];
        let mut z_hi = vec![DVector::zeros(nu); n_int];
        for (n, s) in qp.stages.iter().enumerate() {
            let (x, u) = (&eq.dx[n], &eq.du[n]);
            let hux = s.hess.view((nx, 0), (nu, nx));
            let huu = s.hess.view((nx, nx), (nu, nu));
            let ru = hux * x + huu * u + s.grad.rows(nx, nu) + s.b.tr_mul(&eq.lam[n + 1]);
            for i in 0..nu {
                match fixed[n][i] {
                    // with u_lo == u_hi the sign of ru picks the side
                    Some(v) if v == s.u_lo[i] && (v != s.u_hi[i] || ru[i] >= 0.0) => z_lo[n][i] = ru[i],
                    Some(_) => z_hi[n][i] = -ru[i],
                    None => {
                        if u[i] < s.u_lo[i] || u[i] > s.u_hi[i] {
                            return Ok(None);
                        }
                    }
                }
            }
        }
        if z_lo.iter().chain(&z_hi).any(|z| z.min() < -0.1 * sol.tolerance) {
            return Ok(None);
        }
        let mut polished = QpSolution {
            dx: eq.dx,
            du: eq.du,
            lam: eq.lam,
            z_lo,
            z_hi,
            kkt_residual: 0.0,
            tolerance: sol.tolerance,
            iterations: sol.iterations,
        };
        polished.kkt_residual = kkt_residuals(qp, x0_fix, &polished).max();
        Ok(Some(polished))
    }

    /// Packs the iterate, zeroing multipliers of inactive bounds, and
    /// evaluates its KKT residual.
    fn finish(&self, qp: &QpData, x0_fix: &DVector<f64>, primal: Primal, iterations: usize, tol: f64) -> QpSolution {
        let (nu, n_int) = (qp.nu(), qp.n_intervals());
        let mut z_lo = vec![DVector::zeros(nu); n_int];
        let mut z_hi = vec![DVector::zeros(nu); n_int];
        for n in 0..n_int {
            let (s, w) = (&qp.stages[n], &self.work[n]);
            for i in 0..nu {
                let u = primal.u[n][i];
                if s.u_lo[i].is_finite() {
                    let (slack, z) = (u - s.u_lo[i], w.z_lo[i]);
                    let inactive = z <= 0.1 * tol && slack > z;
                    z_lo[n][i] = if inactive { 0.0 } else { z };
                }
                if s.u_hi[i].is_finite() {
                    let (slack, z) = (s.u_hi[i] - u, w.z_hi[i]);
                    let inactive = z <= 0.1 * tol && slack > z;
                    z_hi[n][i] = if inactive { 0.0 } else { z };
                }
            }
        }
        let mut sol = QpSolution {
            dx: primal.x,
            du: primal.u,
            lam: primal.lam,
            z_lo,
            z_hi,
            kkt_residual: 0.0,
            tolerance: tol,
            iterations,
        };
        sol.kkt_residual = kkt_residuals(qp, x0_fix, &sol).max();
        sol
    }
}

/// One-shot convenience wrapper.
pub fn solve_qp(qp: &QpData, x0_fix: &DVector<f64>, options: QpOptions) -> Result<QpSolution> {
    OcpQpSolver::new(options).solve(qp, x0_fix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::QpStage;

    fn scalar_qp(h: f64, g: f64, lo: f64, hi: f64) -> QpData {
        // nx = 1 with trivial dynamics, nu = 1
        let mut qp = QpData::zeros(1, 1, 1);
        let s: &mut QpStage = &mut qp.stages[0];
        s.hess[(1, 1)] = h;
        s.grad[1] = g;
        s.a[(0, 0)] = 1.0;
        s.u_lo[0] = lo;
        s.u_hi[0] = hi;
        qp
    }

    #[test]
    fn active_lower_bound_multiplier() {
        let qp = scalar_qp(1.0, 2.0, -1.0, f64::INFINITY);
        let sol = solve_qp(&qp, &DVector::zeros(1), QpOptions::default()).unwrap();
        assert!((sol.du[0][0] + 1.0).abs() < 1e-8, "{}", sol.du[0][0]);
        assert!((sol.z_lo[0][0] - 1.0).abs() < 1e-8);
        assert_eq!(sol.z_hi[0][0], 0.0);
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn trivial_problem_returns_exact_zero() {
        let qp = scalar_qp(1.0, 0.0, f64::NEG_INFINITY, f64::INFINITY);
        let sol = solve_qp(&qp, &DVector::zeros(1), QpOptions::default()).unwrap();
        assert_eq!(sol.du[0][0], 0.0);
        assert_eq!(sol.kkt_residual, 0.0);
        let qp = scalar_qp(1.0, 0.0, -1.0, 1.0);
        let sol = solve_qp(&qp, &DVector::zeros(1), QpOptions::default()).unwrap();
        assert_eq!(sol.du[0][0], 0.0);
        assert_eq!(sol.kkt_residual, 0.0);
    }

    #[test]
    fn indefinite_block_reported_with_stage() {
        let qp = scalar_qp(-1.0, 0.0, f64::NEG_INFINITY, f64::INFINITY);
        let err = solve_qp(&qp, &DVector::zeros(1), QpOptions::default()).unwrap_err();
        assert_eq!(err, Error::NonConvexBlock { stage: 0 });
    }

    #[test]
    fn iteration_cap_is_reported() {
        let qp = scalar_qp(1.0, 2.0, -1.0, 1.0);
        let err = solve_qp(&qp, &DVector::zeros(1), QpOptions { tol: 1e-10, max_iter: 1 }).unwrap_err();
        assert!(matches!(err, Error::QpMaxIterations { iterations: 1, .. }));
    }

    #[test]
    fn shape_errors() {
        let qp = scalar_qp(1.0, 0.0, -1.0, 1.0);
        assert!(solve_qp(&qp, &DVector::zeros(2), QpOptions::default()).is_err());
        let bad = scalar_qp(1.0, 0.0, 1.0, -1.0);
        assert!(solve_qp(&bad, &DVector::zeros(1), QpOptions::default()).is_err());
    }
}
