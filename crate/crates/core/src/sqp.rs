//! Full-step Gauss-Newton SQP and real-time iteration (RTI) drivers.

use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{Linearizer, NlpIterate, OcpFormulation, QpData};
use crate::qp::{OcpQpSolver, QpOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SqpMode {
    /// Iterate until the step norm drops below the tolerance.
    #[serde(rename = "SQP")]
    Converged,
    /// One iteration per call.
    #[serde(rename = "RTI")]
    Rti,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqpOptions {
    pub mode: SqpMode,
    /// Convergence threshold on the infinity norm of the primal step.
    pub tol_stationarity: f64,
    /// Cap on the number of QP solves per call.
    pub max_iter: usize,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for SqpOptions {
    fn default() -> Self {
        Self {
            mode: SqpMode::Converged,
            tol_stationarity: 1e-6,
            max_iter: 400,
            qp_tol: 1e-10,
            qp_max_iter: 100,
        }
    }
}

impl SqpOptions {
    pub fn rti() -> Self {
        Self {
            mode: SqpMode::Rti,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.qp_max_iter == 0 {
            return Err(Error::InvalidArgument("SQP and QP iteration caps must be >= 1".into()));
        }
        if !(self.tol_stationarity > 0.0) || !(self.qp_tol > 0.0) {
            return Err(Error::InvalidArgument("SQP and QP tolerances must be > 0".into()));
        }
        Ok(())
    }

    fn qp_options(&self) -> QpOptions {
        QpOptions {
            tol: self.qp_tol,
            max_iter: self.qp_max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SqpStatus {
    Converged,
    /// The single RTI iteration was performed.
    RtiStep,
    /// Iteration cap hit; the last iterate is returned.
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqpStats {
    pub status: SqpStatus,
    /// Number of steps taken before the convergence test succeeded; the
    /// final (small) step is applied but not counted. RTI always reports 1.
    pub iterations: usize,
    /// Infinity norm of each primal step.
    pub step_norms_inf: Vec<f64>,
    /// 2-norm of each primal step over all states and controls.
    pub step_norms: Vec<f64>,
    /// `kappa[k] = step_norms[k + 1] / step_norms[k]`.
    pub kappa: Vec<f64>,
    pub qp_iterations: Vec<usize>,
    /// Integration and linearization.
    pub preparation: Duration,
    /// QP solve and step application.
    pub feedback: Duration,
    /// NLP objective at the last linearization point.
    pub objective: f64,
}

impl SqpStats {
    fn new() -> Self {
        Self {
            status: SqpStatus::Converged,
            iterations: 0,
            step_norms_inf: Vec::new(),
            step_norms: Vec::new(),
            kappa: Vec::new(),
            qp_iterations: Vec::new(),
            preparation: Duration::ZERO,
            feedback: Duration::ZERO,
            objective: 0.0,
        }
    }

    pub fn total(&self) -> Duration {
        self.preparation + self.feedback
    }

    pub fn converged(&self) -> bool {
        self.status != SqpStatus::MaxIterations
    }
}

/// Empirical contraction rates from a sequence of step norms. Stops at the
/// first zero step.
pub fn contraction_rates(step_norms: &[f64]) -> Vec<f64> {
    step_norms
        .windows(2)
        .take_while(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect()
}

/// Controller state: problem, current iterate and all workspaces. Movable
/// between threads; one call at a time.
#[derive(Debug, Clone)]
pub struct SqpSolver {
    ocp: OcpFormulation,
    options: SqpOptions,
    iterate: NlpIterate,
    linearizer: Linearizer,
    qp: QpData,
    qp_solver: OcpQpSolver,
    prepared: bool,
}

impl SqpSolver {
    /// Cold start from `x_init` replicated over the horizon.
    pub fn new(ocp: OcpFormulation, options: SqpOptions, x_init: &DVector<f64>) -> Result<Self> {
        options.validate()?;
        if x_init.len() != ocp.nx() {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: ocp.nx(),
                got: x_init.len(),
            });
        }
        let iterate = NlpIterate::replicate(&ocp, x_init);
        Ok(Self {
            linearizer: Linearizer::new(&ocp)?,
            qp: QpData::zeros(ocp.nx(), ocp.nu(), ocp.n_intervals()),
            qp_solver: OcpQpSolver::new(options.qp_options()),
            ocp,
            options,
            iterate,
            prepared: false,
        })
    }

    pub fn ocp(&self) -> &OcpFormulation {
        &self.ocp
    }

    pub fn options(&self) -> &SqpOptions {
        &self.options
    }

    pub fn iterate(&self) -> &NlpIterate {
        &self.iterate
    }

    pub fn set_iterate(&mut self, iterate: NlpIterate) -> Result<()> {
        iterate.check_dims(&self.ocp)?;
        self.iterate = iterate;
        self.prepared = false;
        Ok(())
    }

    /// Resets to the cold-start iterate.
    pub fn reset(&mut self, x_init: &DVector<f64>) {
        self.iterate = NlpIterate::replicate(&self.ocp, x_init);
        self.prepared = false;
    }

    pub fn first_control(&self) -> &DVector<f64> {
        &self.iterate.u[0]
    }

    pub fn linearizer(&self) -> &Linearizer {
        &self.linearizer
    }

    /// Linearizes at the current iterate. Independent of the measured state,
    /// so RTI can run it ahead of the next sample.
    pub fn prepare(&mut self) -> Result<Duration> {
        let start = Instant::now();
        self.linearizer.linearize_into(&self.ocp, &self.iterate, &mut self.qp)?;
        self.prepared = true;
        Ok(start.elapsed())
    }

    /// Solves the prepared QP for `x0` and applies the full step. Returns the
    /// step norms (infinity, 2) and the QP iteration count.
    fn feedback(&mut self, x0: &DVector<f64>) -> Result<(f64, f64, usize)> {
        debug_assert!(self.prepared);
        let sol = self.qp_solver.solve(&self.qp, x0)?;
        self.prepared = false;
        let (mut inf, mut sq) = (0.0f64, 0.0);
        for (x, dx) in self.iterate.x.iter_mut().zip(&sol.dx) {
            inf = inf.max(dx.amax());
            sq += dx.norm_squared();
            *x += dx;
        }
        for (u, du) in self.iterate.u.iter_mut().zip(&sol.du) {
            inf = inf.max(du.amax());
            sq += du.norm_squared();
            *u += du;
        }
        self.iterate.lam = sol.lam;
        self.iterate.z_lo = sol.z_lo;
        self.iterate.z_hi = sol.z_hi;
        if !self.iterate.is_finite() {
            return Err(Error::NonFinite("SQP iterate"));
        }
        Ok((inf, sq.sqrt(), sol.iterations))
    }

    /// Runs SQP or RTI from the measured state `x0`, warm-started from the
    /// current iterate.
    pub fn solve(&mut self, x0: &DVector<f64>) -> Result<SqpStats> {
        if x0.len() != self.ocp.nx() {
            return Err(Error::DimensionMismatch {
                context: "initial state",
                expected: self.ocp.nx(),
                got: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        let mut stats = SqpStats::new();
        let cap = match self.options.mode {
            SqpMode::Rti => 1,
            SqpMode::Converged => self.options.max_iter,
        };
        let mut converged = false;
        for k in 0..cap {
            let wrap = |e: Error| Error::Sqp {
                iteration: k,
                source: Box::new(e),
            };
            if !self.prepared {
                stats.preparation += self.prepare().map_err(wrap)?;
            }
            stats.objective = self.qp.objective;
            let start = Instant::now();
            let (inf, two, qp_iter) = self.feedback(x0).map_err(wrap)?;
            stats.feedback += start.elapsed();
            stats.step_norms_inf.push(inf);
            stats.step_norms.push(two);
            stats.qp_iterations.push(qp_iter);
            if inf <= self.options.tol_stationarity {
                stats.iterations = k;
                converged = true;
                break;
            }
        }
        stats.kappa = contraction_rates(&stats.step_norms);
        stats.status = match self.options.mode {
            SqpMode::Rti => {
                stats.iterations = 1;
                SqpStatus::RtiStep
            }
            SqpMode::Converged if converged => SqpStatus::Converged,
            SqpMode::Converged => {
                stats.iterations = cap;
                SqpStatus::MaxIterations
            }
        };
        Ok(stats)
    }
}

/// One-shot SQP solve; cold-started from `x0` unless `warm` is given.
pub fn sqp_solve(
    ocp: &OcpFormulation,
    x0: &DVector<f64>,
    warm: Option<&NlpIterate>,
    options: SqpOptions,
) -> Result<(NlpIterate, SqpStats)> {
    let mut solver = SqpSolver::new(ocp.clone(), options, x0)?;
    if let Some(w) = warm {
        solver.set_iterate(w.clone())?;
    }
    let stats = solver.solve(x0)?;
    Ok((solver.iterate, stats))
}

/// Empirical contraction rates of a cold-started converged SQP solve.
pub fn contraction_experiment(ocp: &OcpFormulation, x0: &DVector<f64>, options: SqpOptions) -> Result<Vec<f64>> {
    if options.mode != SqpMode::Converged {
        return Err(Error::InvalidArgument("contraction experiment needs converged SQP mode".into()));
    }
    let (_, stats) = sqp_solve(ocp, x0, None, options)?;
    Ok(stats.kappa)
}
