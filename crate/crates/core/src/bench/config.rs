use std::collections::HashSet;
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::controller::{GridKind, PendulumMpcConfig};
use crate::error::{Error, Result};
use crate::ocp::CostDiscretization;
use crate::pendulum::{PendulumCostWeights, PendulumParams};
use crate::sqp::{SqpMode, SqpOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level benchmark file. See `configs/README.md` for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub schema: u32,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default, rename = "variant")]
    pub variants: Vec<VariantConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStart {
    /// Reuse the previous solution unchanged.
    None,
    /// Shift the previous solution by one interval, duplicating the last node.
    Shift,
}

/// Settings shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub x0: [f64; 4],
    pub ts: f64,
    pub sim_duration: f64,
    pub timing_repeats: usize,
    pub u_max: f64,
    pub plant_stages: usize,
    pub newton_tol: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub q: [f64; 4],
    pub r: f64,
    pub gamma: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub sqp_tol: f64,
    pub sqp_max_iter: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub warm_start: WarmStart,
    /// Variant whose closed-loop cost is the suboptimality reference.
    pub baseline: String,
    /// Initial pole angles of the contraction experiment.
    pub contraction_theta0: Vec<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        let params = PendulumParams::default();
        let w = PendulumCostWeights::default();
        Self {
            x0: [0.0, std::f64::consts::FRAC_PI_4, 0.0, 0.0],
            ts: 0.02,
            sim_duration: 4.0,
            timing_repeats: 5,
            u_max: 40.0,
            plant_stages: 4,
            newton_tol: 1e-12,
            cart_mass: params.cart_mass,
            pole_mass: params.pole_mass,
            length: params.length,
            gravity: params.gravity,
            q: w.q_diag,
            r: w.r,
            gamma: w.gamma,
            p_min: w.p_min,
            p_max: w.p_max,
            sqp_tol: 1e-6,
            sqp_max_iter: 400,
            qp_tol: 1e-10,
            qp_max_iter: 100,
            warm_start: WarmStart::None,
            baseline: "A".into(),
            contraction_theta0: vec![std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_8],
        }
    }
}

impl Scenario {
    pub fn params(&self) -> PendulumParams {
        PendulumParams {
            cart_mass: self.cart_mass,
            pole_mass: self.pole_mass,
            length: self.length,
            gravity: self.gravity,
        }
    }

    pub fn weights(&self) -> PendulumCostWeights {
        PendulumCostWeights {
            q_diag: self.q,
            r: self.r,
            gamma: self.gamma,
            p_min: self.p_min,
            p_max: self.p_max,
        }
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.x0)
    }

    /// Number of closed-loop sampling instants.
    pub fn n_sim_steps(&self) -> usize {
        (self.sim_duration / self.ts).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return bad(format!("ts must be > 0, got {}", self.ts));
        }
        if !(self.sim_duration >= 0.0) || !self.sim_duration.is_finite() {
            return bad(format!("sim_duration must be >= 0, got {}", self.sim_duration));
        }
        let steps = self.sim_duration / self.ts;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return bad("sim_duration must be a multiple of ts".into());
        }
        if self.timing_repeats == 0 {
            return bad("timing_repeats must be >= 1".into());
        }
        if self.plant_stages == 0 || self.plant_stages > crate::butcher::MAX_RADAU_STAGES {
            return bad(format!("plant_stages out of range: {}", self.plant_stages));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad("x0 must be finite".into());
        }
        self.params().validate().map_err(|e| Error::Config(e.to_string()))?;
        crate::pendulum::make_pendulum_cost(&self.weights()).map_err(|e| Error::Config(e.to_string()))?;
        self.sqp_options(SqpMode::Converged)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn sqp_options(&self, mode: SqpMode) -> SqpOptions {
        SqpOptions {
            mode,
            tol_stationarity: self.sqp_tol,
            max_iter: self.sqp_max_iter,
            qp_tol: self.qp_tol,
            qp_max_iter: self.qp_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HessianKind {
    /// Gauss-Newton.
    GN,
}

/// One controller variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub id: String,
    #[serde(default = "default_hessian")]
    pub hessian: HessianKind,
    pub cost: CostDiscretization,
    pub grid: GridKind,
    pub algorithm: SqpMode,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default = "default_stages")]
    pub n_stages: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    /// Also run the contraction experiment for this variant.
    #[serde(default)]
    pub contraction: bool,
}

fn default_hessian() -> HessianKind {
    HessianKind::GN
}

fn default_stages() -> usize {
    4
}

fn default_steps() -> usize {
    1
}

impl VariantConfig {
    /// Short human-readable summary, e.g. `GNRK N=20 T=4 nonuniform RTI`.
    pub fn describe(&self) -> String {
        let hess = match self.hessian {
            HessianKind::GN => "GN",
        };
        let grid = match self.grid {
            GridKind::Uniform => "uniform",
            GridKind::Nonuniform => "nonuniform",
        };
        let alg = match self.algorithm {
            SqpMode::Converged => "SQP",
            SqpMode::Rti => "RTI",
        };
        format!(
            "{hess}{} N={} T={} {grid} {alg} stages={} steps={}",
            self.cost, self.n, self.horizon, self.n_stages, self.n_steps
        )
    }

    pub fn mpc_config(&self, scenario: &Scenario) -> PendulumMpcConfig {
        PendulumMpcConfig {
            params: scenario.params(),
            weights: scenario.weights(),
            u_max: scenario.u_max,
            n_intervals: self.n,
            horizon: self.horizon,
            grid: self.grid,
            ts: scenario.ts,
            n_stages: self.n_stages,
            n_steps: self.n_steps,
            newton_tol: scenario.newton_tol,
            discretization: self.cost,
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema {}, expected {SCHEMA_VERSION}",
                self.schema
            )));
        }
        self.scenario.validate()?;
        let mut seen = HashSet::new();
        for v in &self.variants {
            if v.id.is_empty() || v.id.contains(',') || v.id.contains('"') {
                return Err(Error::Config(format!("invalid variant id {:?}", v.id)));
            }
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Config(format!("duplicate variant id {:?}", v.id)));
            }
            if v.n == 0 || !(v.horizon > 0.0) || v.n_steps == 0 {
                return Err(Error::Config(format!("variant {}: N, T and n_steps must be positive", v.id)));
            }
            if v.n_stages == 0 || v.n_stages > crate::butcher::MAX_RADAU_STAGES {
                return Err(Error::Config(format!("variant {}: n_stages out of range", v.id)));
            }
            if v.grid == GridKind::Nonuniform && (v.n < 2 || !(self.scenario.ts < v.horizon)) {
                return Err(Error::Config(format!(
                    "variant {}: nonuniform grid needs N >= 2 and ts < T",
                    v.id
                )));
            }
        }
        if !self.variants.is_empty() && !seen.contains(self.scenario.baseline.as_str()) {
            return Err(Error::Config(format!(
                "baseline variant {:?} is not defined",
                self.scenario.baseline
            )));
        }
        Ok(())
    }

    pub fn variant(&self, id: &str) -> Option<&VariantConfig> {
        self.variants.iter().find(|v| v.id == id)
    }
}
