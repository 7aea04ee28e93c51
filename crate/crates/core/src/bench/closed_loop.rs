use std::time::{Duration, Instant};

use nalgebra::DVector;

use super::config::{Scenario, VariantConfig, WarmStart};
use super::plant::Plant;
use crate::controller::pendulum_controller;
use crate::error::{Error, Result};
use crate::sqp::{SqpSolver, SqpStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    /// Sampling instants `0, Ts, ..., sim_duration`.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Control applied on `[t_k, t_k + Ts)`; one fewer entry than `states`.
    pub controls: Vec<DVector<f64>>,
    /// Plant cost state, starting at 0.
    pub cost: Vec<f64>,
    pub iterations: Vec<usize>,
    pub statuses: Vec<SqpStatus>,
    /// Per-instant solver wall time, minimum over the timing repeats.
    pub call_times: Vec<Duration>,
    pub preparation_times: Vec<Duration>,
    pub feedback_times: Vec<Duration>,
}

/// Order statistics of the per-call times, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub min_ms: f64,
    pub median_ms: f64,
    pub max_ms: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl ClosedLoopResult {
    pub fn total_cost(&self) -> f64 {
        *self.cost.last().expect("cost trajectory starts with 0")
    }

    pub fn final_state_norm_inf(&self) -> f64 {
        self.states.last().map_or(0.0, |x| x.amax())
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }

    pub fn median_iterations(&self) -> f64 {
        let mut it: Vec<f64> = self.iterations.iter().map(|v| *v as f64).collect();
        it.sort_by(f64::total_cmp);
        median(&it)
    }

    pub fn hit_iteration_cap(&self) -> bool {
        self.statuses.contains(&SqpStatus::MaxIterations)
    }

    pub fn timing(&self) -> TimingSummary {
        let mut ms: Vec<f64> = self.call_times.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        TimingSummary {
            min_ms: ms.first().copied().unwrap_or(f64::NAN),
            median_ms: median(&ms),
            max_ms: ms.last().copied().unwrap_or(f64::NAN),
        }
    }
}

/// `100 (J - J_base) / J_base` on the plant's integrated cost.
pub fn relative_suboptimality(result: &ClosedLoopResult, baseline: &ClosedLoopResult) -> Result<f64> {
    if result.times.len() != baseline.times.len() {
        return Err(Error::InvalidArgument(
            "closed-loop results cover different durations".into(),
        ));
    }
    let (j, j_base) = (result.total_cost(), baseline.total_cost());
    if !(j_base > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "baseline cost must be > 0, got {j_base}"
        )));
    }
    Ok(100.0 * (j - j_base) / j_base)
}

fn shift_iterate(solver: &mut SqpSolver) -> Result<()> {
    let mut it = solver.iterate().clone();
    for v in [&mut it.x, &mut it.lam, &mut it.u, &mut it.z_lo, &mut it.z_hi] {
        if v.len() > 1 {
            v.rotate_left(1);
            let last = v.len() - 1;
            v[last] = v[last - 1].clone();
        }
    }
    solver.set_iterate(it)
}

fn simulate_once(scenario: &Scenario, variant: &VariantConfig) -> Result<ClosedLoopResult> {
    let x0 = scenario.x0();
    let cfg = variant.mpc_config(scenario);
    let mut controller = pendulum_controller(&cfg, scenario.sqp_options(variant.algorithm), &x0)?;
    let mut plant = Plant::new(
        scenario.params(),
        &scenario.weights(),
        scenario.plant_stages,
        1,
        scenario.newton_tol,
        scenario.ts,
    )?;
    let steps = scenario.n_sim_steps();
    let mut r = ClosedLoopResult {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps),
        cost: Vec::with_capacity(steps + 1),
        iterations: Vec::with_capacity(steps),
        statuses: Vec::with_capacity(steps),
        call_times: Vec::with_capacity(steps),
        preparation_times: Vec::with_capacity(steps),
        feedback_times: Vec::with_capacity(steps),
    };
    let mut x = x0;
    let mut c = 0.0;
    r.times.push(0.0);
    r.states.push(x.clone());
    r.cost.push(c);
    for k in 0..steps {
        let wrap = |e: Error| Error::ClosedLoop {
            step: k,
            source: Box::new(e),
        };
        if k > 0 && scenario.warm_start == WarmStart::Shift {
            shift_iterate(&mut controller).map_err(wrap)?;
        }
        let start = Instant::now();
        let stats = controller.solve(&x);
        let elapsed = start.elapsed();
        let stats = stats.map_err(wrap)?;
        let u = controller.first_control().clone();
        let (x_next, dc) = plant.step(&x, &u).map_err(wrap)?;
        if x_next.iter().any(|v| !v.is_finite()) || !dc.is_finite() {
            return Err(wrap(Error::NonFinite("plant state")));
        }
        x = x_next;
        c += dc;
        r.call_times.push(elapsed);
        r.preparation_times.push(stats.preparation);
        r.feedback_times.push(stats.feedback);
        r.iterations.push(stats.iterations);
        r.statuses.push(stats.status);
        r.controls.push(u);
        r.times.push((k + 1) as f64 * scenario.ts);
        r.states.push(x.clone());
        r.cost.push(c);
    }
    Ok(r)
}

/// Runs the closed loop `repeats` times and keeps the per-instant minimum
/// of the solver call times. Trajectories come from the first run; all runs
/// are deterministic.
pub fn run_closed_loop(scenario: &Scenario, variant: &VariantConfig, repeats: usize) -> Result<ClosedLoopResult> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("timing repeats must be >= 1".into()));
    }
    let mut best = simulate_once(scenario, variant)?;
    for _ in 1..repeats {
        let run = simulate_once(scenario, variant)?;
        for (slot, t) in [
            (&mut best.call_times, &run.call_times),
            (&mut best.preparation_times, &run.preparation_times),
            (&mut best.feedback_times, &run.feedback_times),
        ] {
            for (b, t) in slot.iter_mut().zip(t) {
                *b = (*b).min(*t);
            }
        }
    }
    Ok(best)
}
