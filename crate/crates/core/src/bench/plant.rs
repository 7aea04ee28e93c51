use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::irk::{IrkIntegrator, IrkSettings, StepOutput};
use crate::model::{ExplicitOde, ImplicitOde, ResidualCost};
use crate::pendulum::{make_pendulum_cost, CartPole, PendulumCostWeights, PendulumParams, NU, NX};

/// Pendulum dynamics with an extra state `c`, `cdot = l(x, u)`.
#[derive(Debug, Clone)]
pub struct CostAugmentedPendulum {
    pendulum: CartPole,
    cost: ResidualCost,
}

impl CostAugmentedPendulum {
    pub fn new(params: PendulumParams, weights: &PendulumCostWeights) -> Result<Self> {
        Ok(Self {
            pendulum: CartPole::new(params)?,
            cost: make_pendulum_cost(weights)?,
        })
    }

    pub fn cost(&self) -> &ResidualCost {
        &self.cost
    }
}

impl ExplicitOde for CostAugmentedPendulum {
    fn nx(&self) -> usize {
        NX + 1
    }

    fn nu(&self) -> usize {
        NU
    }

    fn rhs(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.pendulum.rhs(t, &x[..NX], u, &mut out[..NX]);
        out[NX] = self.cost.value(&x[..NX], u);
    }

    fn rhs_jacobians(&self, t: f64, x: &[f64], u: &[f64], jac_x: &mut DMatrix<f64>, jac_u: &mut DMatrix<f64>) {
        let mut fx = DMatrix::zeros(NX, NX);
        let mut fu = DMatrix::zeros(NX, NU);
        self.pendulum.rhs_jacobians(t, &x[..NX], u, &mut fx, &mut fu);
        let grad = self.cost.gradient(&x[..NX], u);
        jac_x.fill(0.0);
        jac_x.view_mut((0, 0), (NX, NX)).copy_from(&fx);
        jac_u.view_mut((0, 0), (NX, NU)).copy_from(&fu);
        for j in 0..NX {
            jac_x[(NX, j)] = grad[j];
        }
        jac_u[(NX, 0)] = grad[NX];
    }
}

/// Simulation plant: one Radau IIA step per sampling period on the
/// cost-augmented model.
#[derive(Debug, Clone)]
pub struct Plant {
    model: ImplicitOde<CostAugmentedPendulum>,
    integrator: IrkIntegrator,
    out: StepOutput,
    ts: f64,
}

impl Plant {
    pub fn new(
        params: PendulumParams,
        weights: &PendulumCostWeights,
        n_stages: usize,
        n_steps: usize,
        newton_tol: f64,
        ts: f64,
    ) -> Result<Self> {
        if !(ts > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling time must be > 0, got {ts}")));
        }
        let mut settings = IrkSettings::radau(n_stages, n_steps)?;
        settings.newton_tol = newton_tol;
        Ok(Self {
            model: ImplicitOde(CostAugmentedPendulum::new(params, weights)?),
            integrator: IrkIntegrator::new(settings, NX + 1, NU)?,
            out: StepOutput::zeros(NX + 1, NU),
            ts,
        })
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    /// Advances the physical state by one sampling period under constant
    /// `u`. Returns the next state and the cost accumulated over the period.
    pub fn step(&mut self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if x.len() != NX || u.len() != NU {
            return Err(Error::DimensionMismatch {
                context: "plant input",
                expected: NX + NU,
                got: x.len() + u.len(),
            });
        }
        let mut xa = [0.0; NX + 1];
        xa[..NX].copy_from_slice(x.as_slice());
        self.integrator
            .integrate_into(&self.model, None, 0.0, self.ts, &xa, u.as_slice(), &mut self.out)?;
        let x_next = DVector::from_row_slice(&self.out.x_next.as_slice()[..NX]);
        Ok((x_next, self.out.x_next[NX]))
    }
}
