use crate::error::{Error, Result};

/// Shooting grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    times: Vec<f64>,
}

impl Grid {
    /// Builds a grid from interval lengths.
    pub fn from_intervals(dts: &[f64]) -> Result<Self> {
        if dts.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one interval".into()));
        }
        if let Some(bad) = dts.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument(format!("interval lengths must be > 0, got {bad}")));
        }
        let mut times = Vec::with_capacity(dts.len() + 1);
        times.push(0.0);
        let mut acc = 0.0;
        for dt in dts {
            acc += dt;
            times.push(acc);
        }
        Ok(Self { times })
    }

    /// `N` intervals of length `T / N`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "uniform grid needs T > 0 and N >= 1, got T = {horizon}, N = {n}"
            )));
        }
        let dt = horizon / n as f64;
        let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
        times[n] = horizon;
        Ok(Self { times })
    }

    /// First interval of length `ts`, the remaining `T - ts` split equally
    /// over `N - 1` intervals.
    pub fn nonuniform(horizon: f64, n: usize, ts: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("nonuniform grid needs N >= 2, got {n}")));
        }
        if !(ts > 0.0 && ts < horizon) {
            return Err(Error::InvalidArgument(format!(
                "nonuniform grid needs 0 < Ts < T, got Ts = {ts}, T = {horizon}"
            )));
        }
        let rest = (horizon - ts) / (n - 1) as f64;
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        times.push(ts);
        for i in 1..n {
            times.push(ts + i as f64 * rest);
        }
        times[n] = horizon;
        Ok(Self { times })
    }

    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn dt(&self, n: usize) -> f64 {
        self.times[n + 1] - self.times[n]
    }

    pub fn dts(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }
}
