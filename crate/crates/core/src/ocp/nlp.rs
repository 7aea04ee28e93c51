use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Grid;
use crate::error::{Error, Result};
use crate::irk::{sn_cost_terms_into, CostAccumulator, IrkIntegrator, IrkSettings, SnScratch, StepOutput};
use crate::model::{DynamicsModel, ResidualCost};

/// How the Lagrange term is approximated on each shooting interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostDiscretization {
    /// `dt * l(x_n, u_n)` at the shooting node.
    #[serde(rename = "SN")]
    ShootingNode,
    /// Integrated with the dynamics' Runge-Kutta scheme (GNRK).
    #[serde(rename = "RK")]
    RungeKutta,
}

impl std::fmt::Display for CostDiscretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CostDiscretization::ShootingNode => "SN",
            CostDiscretization::RungeKutta => "RK",
        })
    }
}

/// Multiple-shooting NLP
///
/// ```text
/// min  sum_n L_n(x_n, u_n) + x_N^T P x_N
/// s.t. x_0 = xbar_0,  x_{n+1} = phi_n(x_n, u_n),  u_lo <= u_n <= u_hi
/// ```
#[derive(Clone)]
pub struct OcpFormulation {
    pub model: Arc<dyn DynamicsModel>,
    pub cost: ResidualCost,
    pub grid: Grid,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    /// Terminal weight `P`; the terminal cost is `x^T P x`.
    pub terminal: DMatrix<f64>,
    pub discretization: CostDiscretization,
    pub irk: IrkSettings,
}

impl std::fmt::Debug for OcpFormulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OcpFormulation")
            .field("nx", &self.nx())
            .field("nu", &self.nu())
            .field("grid", &self.grid)
            .field("discretization", &self.discretization)
            .finish_non_exhaustive()
    }
}

impl OcpFormulation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Arc<dyn DynamicsModel>,
        cost: ResidualCost,
        grid: Grid,
        u_lo: DVector<f64>,
        u_hi: DVector<f64>,
        terminal: DMatrix<f64>,
        discretization: CostDiscretization,
        irk: IrkSettings,
    ) -> Result<Self> {
        let (nx, nu) = (model.nx(), model.nu());
        if cost.nx() != nx || cost.nu() != nu {
            return Err(Error::DimensionMismatch {
                context: "cost vs model dimensions",
                expected: nx + nu,
                got: cost.nx() + cost.nu(),
            });
        }
        if u_lo.len() != nu || u_hi.len() != nu {
            return Err(Error::DimensionMismatch {
                context: "control bounds",
                expected: nu,
                got: u_lo.len(),
            });
        }
        if u_lo.iter().zip(u_hi.iter()).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidArgument("control bounds must satisfy u_lo <= u_hi".into()));
        }
        if terminal.shape() != (nx, nx) {
            return Err(Error::DimensionMismatch {
                context: "terminal weight",
                expected: nx,
                got: terminal.nrows(),
            });
        }
        let scale = terminal.amax().max(1.0);
        if (&terminal - terminal.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidArgument("terminal weight must be symmetric".into()));
        }
        if nx > 0 && terminal.clone().symmetric_eigen().eigenvalues.min() < -1e-10 * scale {
            return Err(Error::InvalidArgument("terminal weight must be positive semidefinite".into()));
        }
        irk.validate()?;
        Ok(Self {
            model,
            cost,
            grid,
            u_lo,
            u_hi,
            terminal,
            discretization,
            irk,
        })
    }

    pub fn nx(&self) -> usize {
        self.model.nx()
    }

    pub fn nu(&self) -> usize {
        self.model.nu()
    }

    pub fn n_intervals(&self) -> usize {
        self.grid.n_intervals()
    }
}

/// Primal-dual trajectories of the multiple-shooting NLP.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpIterate {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    /// `lam[0]` belongs to the initial-value constraint, `lam[n + 1]` to the
    /// dynamics of interval `n`.
    pub lam: Vec<DVector<f64>>,
    pub z_lo: Vec<DVector<f64>>,
    pub z_hi: Vec<DVector<f64>>,
}

impl NlpIterate {
    /// All states equal to `x0`, zero controls and multipliers.
    pub fn replicate(ocp: &OcpFormulation, x0: &DVector<f64>) -> Self {
        let (nx, nu, n) = (ocp.nx(), ocp.nu(), ocp.n_intervals());
        Self {
            x: vec![x0.clone(); n + 1],
            u: vec![DVector::zeros(nu); n],
            lam: vec![DVector::zeros(nx); n + 1],
            z_lo: vec![DVector::zeros(nu); n],
            z_hi: vec![DVector::zeros(nu); n],
        }
    }

    pub fn check_dims(&self, ocp: &OcpFormulation) -> Result<()> {
        let (nx, nu, n) = (ocp.nx(), ocp.nu(), ocp.n_intervals());
        let ok = self.x.len() == n + 1
            && self.u.len() == n
            && self.lam.len() == n + 1
            && self.z_lo.len() == n
            && self.z_hi.len() == n
            && self.x.iter().chain(&self.lam).all(|v| v.len() == nx)
            && self.u.iter().chain(&self.z_lo).chain(&self.z_hi).all(|v| v.len() == nu);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                context: "NLP iterate",
                expected: n,
                got: self.u.len(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.u)
            .chain(&self.lam)
            .chain(&self.z_lo)
            .chain(&self.z_hi)
            .all(|v| v.iter().all(|e| e.is_finite()))
    }
}

/// One stage of the structured QP, in step coordinates around the iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct QpStage {
    /// Hessian over `(dx_n, du_n)`.
    pub hess: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `phi_n(x_n, u_n) - x_{n+1}`.
    pub c: DVector<f64>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
}

impl QpStage {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            hess: DMatrix::zeros(nx + nu, nx + nu),
            grad: DVector::zeros(nx + nu),
            a: DMatrix::zeros(nx, nx),
            b: DMatrix::zeros(nx, nu),
            c: DVector::zeros(nx),
            u_lo: DVector::from_element(nu, f64::NEG_INFINITY),
            u_hi: DVector::from_element(nu, f64::INFINITY),
        }
    }
}

/// Stage-wise quadratic model
///
/// ```text
/// min  sum_n 1/2 w_n^T H_n w_n + g_n^T w_n + 1/2 x_N^T H_N x_N + g_N^T x_N
/// s.t. dx_0 = x0_fix - x0,  dx_{n+1} = A_n dx_n + B_n du_n + c_n,
///      u_lo_n <= du_n <= u_hi_n
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    /// Initial state of the linearization point.
    pub x0: DVector<f64>,
    pub stages: Vec<QpStage>,
    pub terminal_hess: DMatrix<f64>,
    pub terminal_grad: DVector<f64>,
    /// NLP objective at the linearization point.
    pub objective: f64,
}

impl QpData {
    pub fn zeros(nx: usize, nu: usize, n: usize) -> Self {
        Self {
            x0: DVector::zeros(nx),
            stages: vec![QpStage::zeros(nx, nu); n],
            terminal_hess: DMatrix::zeros(nx, nx),
            terminal_grad: DVector::zeros(nx),
            objective: 0.0,
        }
    }

    pub fn nx(&self) -> usize {
        self.x0.len()
    }

    pub fn nu(&self) -> usize {
        self.stages.first().map_or(0, |s| s.b.ncols())
    }

    pub fn n_intervals(&self) -> usize {
        self.stages.len()
    }
}

/// Evaluates the QP model of an NLP iterate. Owns the integrator workspace.
#[derive(Debug, Clone)]
pub struct Linearizer {
    integrator: IrkIntegrator,
    step: StepOutput,
    sn_acc: CostAccumulator,
    sn_scratch: SnScratch,
}

impl Linearizer {
    pub fn new(ocp: &OcpFormulation) -> Result<Self> {
        let (nx, nu) = (ocp.nx(), ocp.nu());
        Ok(Self {
            integrator: IrkIntegrator::new(ocp.irk.clone(), nx, nu)?,
            step: StepOutput::zeros(nx, nu),
            sn_acc: CostAccumulator::zeros(nx + nu),
            sn_scratch: SnScratch::new(&ocp.cost),
        })
    }

    pub fn integrator(&self) -> &IrkIntegrator {
        &self.integrator
    }

    /// Fills `qp` with the linearization of `ocp` at `iterate`. Deterministic:
    /// repeated calls with the same inputs are bit-identical.
    pub fn linearize_into(&mut self, ocp: &OcpFormulation, iterate: &NlpIterate, qp: &mut QpData) -> Result<()> {
        iterate.check_dims(ocp)?;
        let (nx, nu, n) = (ocp.nx(), ocp.nu(), ocp.n_intervals());
        if qp.n_intervals() != n || qp.nx() != nx || qp.nu() != nu {
            *qp = QpData::zeros(nx, nu, n);
        }
        if self.integrator.settings() != &ocp.irk || self.integrator.nx() != nx || self.integrator.nu() != nu {
            *self = Self::new(ocp)?;
        }
        qp.x0.copy_from(&iterate.x[0]);
        let mut objective = 0.0;
        for (stage, qs) in qp.stages.iter_mut().enumerate() {
            let t0 = ocp.grid.times()[stage];
            let dt = ocp.grid.dt(stage);
            let (x, u) = (iterate.x[stage].as_slice(), iterate.u[stage].as_slice());
            match ocp.discretization {
                CostDiscretization::RungeKutta => {
                    self.integrator
                        .integrate_into(ocp.model.as_ref(), Some(&ocp.cost), t0, dt, x, u, &mut self.step)
                        .map_err(|e| e.at_stage(stage))?;
                    qs.hess.copy_from(&self.step.hess);
                    qs.grad.copy_from(&self.step.grad);
                    objective += self.step.cost;
                }
                CostDiscretization::ShootingNode => {
                    self.integrator
                        .integrate_into(ocp.model.as_ref(), None, t0, dt, x, u, &mut self.step)
                        .map_err(|e| e.at_stage(stage))?;
                    sn_cost_terms_into(&ocp.cost, dt, x, u, &mut self.sn_acc, self.sn_scratch.inner())
                        .map_err(|e| e.at_stage(stage))?;
                    qs.hess.copy_from(&self.sn_acc.hess);
                    qs.grad.copy_from(&self.sn_acc.grad);
                    objective += self.sn_acc.cost;
                }
            }
            qs.a.copy_from(&self.step.sens.columns(0, nx));
            qs.b.copy_from(&self.step.sens.columns(nx, nu));
            qs.c.copy_from(&self.step.x_next);
            qs.c -= &iterate.x[stage + 1];
            qs.u_lo.copy_from(&ocp.u_lo);
            qs.u_lo -= &iterate.u[stage];
            qs.u_hi.copy_from(&ocp.u_hi);
            qs.u_hi -= &iterate.u[stage];
        }
        let xn = &iterate.x[n];
        qp.terminal_hess.copy_from(&ocp.terminal);
        qp.terminal_hess *= 2.0;
        qp.terminal_grad.gemv(2.0, &ocp.terminal, xn, 0.0);
        objective += xn.dot(&(&ocp.terminal * xn));
        qp.objective = objective;
        Ok(())
    }

    pub fn linearize(&mut self, ocp: &OcpFormulation, iterate: &NlpIterate) -> Result<QpData> {
        let mut qp = QpData::zeros(ocp.nx(), ocp.nu(), ocp.n_intervals());
        self.linearize_into(ocp, iterate, &mut qp)?;
        Ok(qp)
    }
}

/// One-shot linearization.
pub fn linearize(ocp: &OcpFormulation, iterate: &NlpIterate) -> Result<QpData> {
    Linearizer::new(ocp)?.linearize(ocp, iterate)
}
