//! Pendulum-on-cart MPC controller assembly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irk::{IrkIntegrator, IrkSettings};
use crate::ocp::{solve_dare, CostDiscretization, DareOptions, Grid, OcpFormulation};
use crate::pendulum::{make_pendulum_cost, make_pendulum_model, PendulumCostWeights, PendulumParams, NU, NX};
use crate::sqp::{SqpOptions, SqpSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// `dt = T / N`.
    Uniform,
    /// First interval `Ts`, the rest split equally.
    Nonuniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumMpcConfig {
    pub params: PendulumParams,
    pub weights: PendulumCostWeights,
    /// Symmetric force bound `|u| <= u_max`.
    pub u_max: f64,
    pub n_intervals: usize,
    pub horizon: f64,
    pub grid: GridKind,
    pub ts: f64,
    pub n_stages: usize,
    pub n_steps: usize,
    pub newton_tol: f64,
    pub discretization: CostDiscretization,
}

impl Default for PendulumMpcConfig {
    fn default() -> Self {
        Self {
            params: PendulumParams::default(),
            weights: PendulumCostWeights::default(),
            u_max: 40.0,
            n_intervals: 20,
            horizon: 4.0,
            grid: GridKind::Nonuniform,
            ts: 0.02,
            n_stages: 4,
            n_steps: 1,
            newton_tol: 1e-12,
            discretization: CostDiscretization::RungeKutta,
        }
    }
}

impl PendulumMpcConfig {
    pub fn grid(&self) -> Result<Grid> {
        match self.grid {
            GridKind::Uniform => Grid::uniform(self.horizon, self.n_intervals),
            GridKind::Nonuniform => Grid::nonuniform(self.horizon, self.n_intervals, self.ts),
        }
    }

    pub fn irk_settings(&self) -> Result<IrkSettings> {
        let mut s = IrkSettings::radau(self.n_stages, self.n_steps)?;
        s.newton_tol = self.newton_tol;
        s.validate()?;
        Ok(s)
    }
}

/// Terminal weight `P` from the DARE of the pendulum linearized at the
/// upright equilibrium, discretized over `ts` with the controller's
/// integrator. The stage weights are `Q ts` and `R ts`, so that `x^T P x`
/// approximates the remaining cost `integral x^T Q x + u^T R u`.
pub fn pendulum_terminal_weight(cfg: &PendulumMpcConfig) -> Result<DMatrix<f64>> {
    if !(cfg.ts > 0.0) {
        return Err(Error::InvalidArgument(format!("sampling time must be > 0, got {}", cfg.ts)));
    }
    let model = make_pendulum_model(cfg.params)?;
    let mut integrator = IrkIntegrator::new(cfg.irk_settings()?, NX, NU)?;
    let out = integrator.integrate(&model, None, 0.0, cfg.ts, &[0.0; NX], &[0.0; NU])?;
    let a = out.sens.columns(0, NX).into_owned();
    let b = out.sens.columns(NX, NU).into_owned();
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&cfg.weights.q_diag)) * cfg.ts;
    let r = DMatrix::from_element(NU, NU, cfg.weights.r * cfg.ts);
    solve_dare(&a, &b, &q, &r, DareOptions::default())
}

pub fn build_pendulum_ocp(cfg: &PendulumMpcConfig) -> Result<OcpFormulation> {
    if !(cfg.u_max > 0.0) {
        return Err(Error::InvalidArgument(format!("u_max must be > 0, got {}", cfg.u_max)));
    }
    let model = Arc::new(make_pendulum_model(cfg.params)?);
    let cost = make_pendulum_cost(&cfg.weights)?;
    OcpFormulation::new(
        model,
        cost,
        cfg.grid()?,
        DVector::from_element(NU, -cfg.u_max),
        DVector::from_element(NU, cfg.u_max),
        pendulum_terminal_weight(cfg)?,
        cfg.discretization,
        cfg.irk_settings()?,
    )
}

/// Controller cold-started at `x_init`.
pub fn pendulum_controller(cfg: &PendulumMpcConfig, options: SqpOptions, x_init: &DVector<f64>) -> Result<SqpSolver> {
    SqpSolver::new(build_pendulum_ocp(cfg)?, options, x_init)
}
