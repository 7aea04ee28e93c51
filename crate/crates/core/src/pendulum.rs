//! Inverted pendulum on a cart.
//!
//! State `x = [p, theta, s, omega]`: cart position, pole angle (0 = upright),
//! cart velocity, angular velocity. Control `u = [F]`: horizontal force on
//! the cart. The pole is a point mass at the tip of a massless rod.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExplicitOde, ImplicitOde, Residual, ResidualCost};
use crate::penalty::{AffineConstraint, L2MaxPenalty};

pub const NX: usize = 4;
pub const NU: usize = 1;
/// Residual rows: 4 states, 1 control, 2 position penalties.
pub const NY: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    /// Cart mass [kg].
    pub cart_mass: f64,
    /// Pole tip mass [kg].
    pub pole_mass: f64,
    /// Rod length [m].
    pub length: f64,
    /// Gravitational acceleration [m/s^2].
    pub gravity: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.8,
            gravity: 9.81,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cart_mass, self.pole_mass, self.length, self.gravity];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "pendulum parameters must be strictly positive: {self:?}"
            )))
        }
    }

    /// Total mechanical energy, used to check integrator consistency.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let (big_m, m, l, g) = (self.cart_mass, self.pole_mass, self.length, self.gravity);
        let (theta, s, omega) = (x[1], x[2], x[3]);
        0.5 * (big_m + m) * s * s - m * l * s * omega * theta.cos()
            + 0.5 * m * l * l * omega * omega
            + m * g * l * theta.cos()
    }
}

/// Explicit cart-pole ODE.
#[derive(Debug, Clone, Copy)]
pub struct CartPole {
    params: PendulumParams,
}

impl CartPole {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }
}

impl ExplicitOde for CartPole {
    fn nx(&self) -> usize {
        NX
    }

    fn nu(&self) -> usize {
        NU
    }

    fn rhs(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let PendulumParams {
            cart_mass: big_m,
            pole_mass: m,
            length: l,
            gravity: g,
        } = self.params;
        let (theta, s, omega, force) = (x[1], x[2], x[3], u[0]);
        let (sn, cs) = theta.sin_cos();
        let den = big_m + m - m * cs * cs;
        out[0] = s;
        out[1] = omega;
        out[2] = (-m * l * sn * omega * omega + m * g * cs * sn + force) / den;
        out[3] = (-m * l * cs * sn * omega * omega + force * cs + (big_m + m) * g * sn) / (l * den);
    }

    fn rhs_jacobians(
        &self,
        _t: f64,
        x: &[f64],
        u: &[f64],
        jac_x: &mut DMatrix<f64>,
        jac_u: &mut DMatrix<f64>,
    ) {
        let PendulumParams {
            cart_mass: big_m,
            pole_mass: m,
            length: l,
            gravity: g,
        } = self.params;
        let (theta, omega, force) = (x[1], x[3], u[0]);
        let (sn, cs) = theta.sin_cos();
        let w2 = omega * omega;
        let den = big_m + m - m * cs * cs;
        let dden = 2.0 * m * cs * sn;

        let num_p = -m * l * sn * w2 + m * g * cs * sn + force;
        let dnum_p_theta = -m * l * cs * w2 + m * g * (cs * cs - sn * sn);
        let dnum_p_omega = -2.0 * m * l * sn * omega;

        let num_t = -m * l * cs * sn * w2 + force * cs + (big_m + m) * g * sn;
        let dnum_t_theta = -m * l * (cs * cs - sn * sn) * w2 - force * sn + (big_m + m) * g * cs;
        let dnum_t_omega = -2.0 * m * l * cs * sn * omega;

        jac_x.fill(0.0);
        jac_x[(0, 2)] = 1.0;
        jac_x[(1, 3)] = 1.0;
        jac_x[(2, 1)] = (dnum_p_theta * den - num_p * dden) / (den * den);
        jac_x[(2, 3)] = dnum_p_omega / den;
        jac_x[(3, 1)] = (dnum_t_theta * den - num_t * dden) / (l * den * den);
        jac_x[(3, 3)] = dnum_t_omega / (l * den);

        jac_u[(0, 0)] = 0.0;
        jac_u[(1, 0)] = 0.0;
        jac_u[(2, 0)] = 1.0 / den;
        jac_u[(3, 0)] = cs / (l * den);
    }
}

pub type PendulumModel = ImplicitOde<CartPole>;

/// Implicit pendulum model `0 = xdot - f(x, u)`.
pub fn make_pendulum_model(params: PendulumParams) -> Result<PendulumModel> {
    Ok(ImplicitOde(CartPole::new(params)?))
}

/// Weights of the pendulum stage cost
/// `x^T Q x + u^T R u + gamma max(p_min - p, 0)^2 + gamma max(p - p_max, 0)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumCostWeights {
    pub q_diag: [f64; 4],
    pub r: f64,
    pub gamma: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for PendulumCostWeights {
    fn default() -> Self {
        Self {
            q_diag: [100.0, 1e3, 0.01, 0.01],
            r: 0.2,
            gamma: 5e4,
            p_min: -1.0,
            p_max: 1.0,
        }
    }
}

/// Residual `r(x, u) = (x, u, max(p_min - p, 0), max(p - p_max, 0))`.
#[derive(Debug, Clone)]
pub struct PendulumResidual {
    lower: L2MaxPenalty<AffineConstraint>,
    upper: L2MaxPenalty<AffineConstraint>,
}

impl PendulumResidual {
    pub fn penalties(&self) -> [&L2MaxPenalty<AffineConstraint>; 2] {
        [&self.lower, &self.upper]
    }
}

impl Residual for PendulumResidual {
    fn nx(&self) -> usize {
        NX
    }

    fn nu(&self) -> usize {
        NU
    }

    fn ny(&self) -> usize {
        NY
    }

    fn eval(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[..NX].copy_from_slice(x);
        out[NX] = u[0];
        let z = [x[0], x[1], x[2], x[3], u[0]];
        let mut scratch = [0.0; NX + NU];
        out[NX + 1] = self.lower.residual(&z, &mut scratch);
        out[NX + 2] = self.upper.residual(&z, &mut scratch);
    }

    fn jacobian(&self, x: &[f64], u: &[f64], out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for i in 0..NX + NU {
            out[(i, i)] = 1.0;
        }
        let z = [x[0], x[1], x[2], x[3], u[0]];
        let mut row = [0.0; NX + NU];
        for (k, pen) in [&self.lower, &self.upper].into_iter().enumerate() {
            pen.residual(&z, &mut row);
            for (j, v) in row.iter().enumerate() {
                out[(NX + 1 + k, j)] = *v;
            }
        }
    }
}

/// Builds the pendulum NLS cost with `W = blockdiag(2Q, 2R, 2 gamma, 2 gamma)`
/// so that `1/2 ||r||_W^2` equals the stage cost exactly.
pub fn make_pendulum_cost(weights: &PendulumCostWeights) -> Result<ResidualCost> {
    let PendulumCostWeights {
        q_diag,
        r,
        gamma,
        p_min,
        p_max,
    } = *weights;
    if !q_diag.iter().all(|q| q.is_finite() && *q > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "state weights must be positive, got {q_diag:?}"
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("control weight must be positive, got {r}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalty weight must be positive, got {gamma}")));
    }
    if !(p_min < p_max) {
        return Err(Error::InvalidArgument(format!(
            "position bounds must satisfy p_min < p_max, got [{p_min}, {p_max}]"
        )));
    }
    let lower = L2MaxPenalty::new(AffineConstraint::lower_bound(NX + NU, 0, p_min), gamma)?;
    let upper = L2MaxPenalty::new(AffineConstraint::upper_bound(NX + NU, 0, p_max), gamma)?;
    let mut diag = [0.0; NY];
    for (d, q) in diag.iter_mut().zip(q_diag) {
        *d = 2.0 * q;
    }
    diag[NX] = 2.0 * r;
    diag[NX + 1] = lower.residual_weight();
    diag[NX + 2] = upper.residual_weight();
    let weight = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&diag));
    ResidualCost::new(Arc::new(PendulumResidual { lower, upper }), weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DynamicsModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_cost(w: &PendulumCostWeights, x: &[f64], u: f64) -> f64 {
        let mut v = 0.0;
        for i in 0..4 {
            v += w.q_diag[i] * x[i] * x[i];
        }
        v += w.r * u * u;
        v += w.gamma * (w.p_min - x[0]).max(0.0).powi(2);
        v += w.gamma * (x[0] - w.p_max).max(0.0).powi(2);
        v
    }

    #[test]
    fn upright_and_hanging_equilibria() {
        let model = make_pendulum_model(PendulumParams::default()).unwrap();
        let mut out = [1.0; 4];
        model.eval(0.0, &[0.0; 4], &[0.0; 4], &[0.0], &mut out);
        assert_eq!(out, [0.0; 4]);
        model.eval(0.0, &[0.0, std::f64::consts::PI, 0.0, 0.0], &[0.0; 4], &[0.0], &mut out);
        assert!(out.iter().all(|v| v.abs() < 1e-14), "{out:?}");
    }

    #[test]
    fn jacobians_match_central_differences() {
        let model = make_pendulum_model(PendulumParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let step = 1e-6;
        let mut jx = DMatrix::zeros(4, 4);
        let mut jxd = DMatrix::zeros(4, 4);
        let mut ju = DMatrix::zeros(4, 1);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let xd: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u = [rng.gen_range(-40.0..40.0)];
            model.jacobians(0.0, &x, &xd, &u, &mut jx, &mut jxd, &mut ju);
            let mut z: Vec<f64> = x.iter().chain(&xd).chain(&u).copied().collect();
            for col in 0..9 {
                let orig = z[col];
                let mut fp = [0.0; 4];
                let mut fm = [0.0; 4];
                z[col] = orig + step;
                model.eval(0.0, &z[0..4], &z[4..8], &z[8..9], &mut fp);
                z[col] = orig - step;
                model.eval(0.0, &z[0..4], &z[4..8], &z[8..9], &mut fm);
                z[col] = orig;
                for row in 0..4 {
                    let fd = (fp[row] - fm[row]) / (2.0 * step);
                    let an = match col {
                        0..=3 => jx[(row, col)],
                        4..=7 => jxd[(row, col - 4)],
                        _ => ju[(row, 0)],
                    };
                    assert!(
                        (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                        "row {row} col {col}: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn cost_examples() {
        let cost = make_pendulum_cost(&PendulumCostWeights::default()).unwrap();
        assert_eq!(cost.value(&[0.0; 4], &[0.0]), 0.0);
        assert_eq!(cost.value(&[2.0, 0.0, 0.0, 0.0], &[0.0]), 50400.0);
        assert_eq!(cost.value(&[0.5, 0.0, 0.0, 0.0], &[0.0]), 25.0);
        let mut r = [0.0; NY];
        cost.residual().eval(&[0.5, 0.0, 0.0, 0.0], &[0.0], &mut r);
        assert_eq!(&r[5..], &[0.0, 0.0]);
    }

    #[test]
    fn cost_equals_direct_evaluation() {
        let w = PendulumCostWeights::default();
        let cost = make_pendulum_cost(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let u = rng.gen_range(-40.0..40.0);
            let a = cost.value(&x, &[u]);
            let b = direct_cost(&w, &x, u);
            assert!(a >= 0.0);
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        let mut w = PendulumCostWeights::default();
        w.p_min = 2.0;
        assert!(make_pendulum_cost(&w).is_err());
        let mut w = PendulumCostWeights::default();
        w.r = 0.0;
        assert!(make_pendulum_cost(&w).is_err());
        let mut w = PendulumCostWeights::default();
        w.gamma = -1.0;
        assert!(make_pendulum_cost(&w).is_err());
        let p = PendulumParams {
            length: 0.0,
            ..Default::default()
        };
        assert!(make_pendulum_model(p).is_err());
    }
}
