use std::path::Path;

use nalgebra::DVector;

use super::closed_loop::{relative_suboptimality, run_closed_loop, ClosedLoopResult};
use super::config::BenchConfig;
use crate::controller::build_pendulum_ocp;
use crate::error::{Error, Result};
use crate::sqp::{contraction_experiment, SqpMode};

pub const RESULTS_HEADER: [&str; 7] = [
    "variant",
    "rel_subopt_pct",
    "max_iter",
    "median_iter",
    "t_min_ms",
    "t_max_ms",
    "status",
];
pub const TRAJECTORIES_HEADER: [&str; 7] = ["variant", "t", "p", "theta", "s", "omega", "u"];
pub const CONTRACTION_HEADER: [&str; 4] = ["variant", "theta0", "k", "kappa_hat"];

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub id: String,
    pub result: std::result::Result<ClosedLoopResult, Error>,
    /// NaN when this run or the baseline failed.
    pub rel_subopt_pct: f64,
}

impl VariantOutcome {
    /// `ok`, `sqp_max_iter` (some call hit the iteration cap) or
    /// `failed: <reason>`.
    pub fn status(&self) -> String {
        match &self.result {
            Ok(r) if r.hit_iteration_cap() => "sqp_max_iter".into(),
            Ok(_) => "ok".into(),
            Err(e) => format!("failed: {e}"),
        }
    }

    pub fn failed(&self) -> bool {
        self.result.is_err()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionRow {
    pub variant: String,
    pub theta0: f64,
    pub k: usize,
    pub kappa_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatrixOutput {
    pub outcomes: Vec<VariantOutcome>,
    pub contraction: Vec<ContractionRow>,
    /// `(variant, theta0, reason)` of failed contraction runs.
    pub contraction_failures: Vec<(String, f64, String)>,
}

impl MatrixOutput {
    pub fn has_failures(&self) -> bool {
        self.outcomes.iter().any(|o| o.failed()) || !self.contraction_failures.is_empty()
    }

    pub fn outcome(&self, id: &str) -> Option<&VariantOutcome> {
        self.outcomes.iter().find(|o| o.id == id)
    }

    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_results_csv(&dir.join("results.csv"), &self.outcomes)?;
        write_trajectories_csv(&dir.join("trajectories.csv"), &self.outcomes)?;
        write_contraction_csv(&dir.join("contraction.csv"), &self.contraction)
    }
}

/// Runs the closed loop for every variant (sequentially, with the
/// configured timing repeats) and the contraction experiment for flagged
/// variants.
pub fn run_benchmark_matrix(cfg: &BenchConfig) -> MatrixOutput {
    let scenario = &cfg.scenario;
    let run = |id: &str| {
        let v = cfg.variant(id).expect("id taken from config");
        run_closed_loop(scenario, v, scenario.timing_repeats)
    };
    let baseline = if cfg.variants.is_empty() {
        None
    } else {
        Some(run(&scenario.baseline))
    };
    let mut outcomes = Vec::with_capacity(cfg.variants.len());
    for v in &cfg.variants {
        let result = if v.id == scenario.baseline {
            baseline.clone().expect("baseline run above")
        } else {
            run(&v.id)
        };
        let rel = match (&result, &baseline) {
            (Ok(r), Some(Ok(b))) => relative_suboptimality(r, b).unwrap_or(f64::NAN),
            _ => f64::NAN,
        };
        outcomes.push(VariantOutcome {
            id: v.id.clone(),
            result,
            rel_subopt_pct: rel,
        });
    }
    let (contraction, contraction_failures) = run_contraction(cfg);
    MatrixOutput {
        outcomes,
        contraction,
        contraction_failures,
    }
}

/// Cold-started converged SQP from `(0, theta0, 0, 0)` for every flagged
/// variant and every configured `theta0`.
pub fn run_contraction(cfg: &BenchConfig) -> (Vec<ContractionRow>, Vec<(String, f64, String)>) {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let options = cfg.scenario.sqp_options(SqpMode::Converged);
    for v in cfg.variants.iter().filter(|v| v.contraction) {
        let ocp = match build_pendulum_ocp(&v.mpc_config(&cfg.scenario)) {
            Ok(ocp) => ocp,
            Err(e) => {
                for &theta0 in &cfg.scenario.contraction_theta0 {
                    failures.push((v.id.clone(), theta0, e.to_string()));
                }
                continue;
            }
        };
        for &theta0 in &cfg.scenario.contraction_theta0 {
            let x0 = DVector::from_row_slice(&[0.0, theta0, 0.0, 0.0]);
            match contraction_experiment(&ocp, &x0, options) {
                Ok(kappa) => rows.extend(kappa.into_iter().enumerate().map(|(k, kappa_hat)| ContractionRow {
                    variant: v.id.clone(),
                    theta0,
                    k,
                    kappa_hat,
                })),
                Err(e) => failures.push((v.id.clone(), theta0, e.to_string())),
            }
        }
    }
    (rows, failures)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_results_csv(path: &Path, outcomes: &[VariantOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(RESULTS_HEADER).map_err(csv_error)?;
    for o in outcomes {
        let record = match &o.result {
            Ok(r) => {
                let t = r.timing();
                [
                    o.id.clone(),
                    num(o.rel_subopt_pct),
                    r.max_iterations().to_string(),
                    num(r.median_iterations()),
                    num(t.min_ms),
                    num(t.max_ms),
                    o.status(),
                ]
            }
            Err(_) => [
                o.id.clone(),
                num(f64::NAN),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                o.status(),
            ],
        };
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format; the last row of each variant has an empty `u`.
pub fn write_trajectories_csv(path: &Path, outcomes: &[VariantOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(TRAJECTORIES_HEADER).map_err(csv_error)?;
    for o in outcomes {
        let Ok(r) = &o.result else { continue };
        for (k, (t, x)) in r.times.iter().zip(&r.states).enumerate() {
            let u = r.controls.get(k).map_or(String::new(), |u| num(u[0]));
            w.write_record([o.id.clone(), num(*t), num(x[0]), num(x[1]), num(x[2]), num(x[3]), u])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_contraction_csv(path: &Path, rows: &[ContractionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(CONTRACTION_HEADER).map_err(csv_error)?;
    for r in rows {
        w.write_record([r.variant.clone(), num(r.theta0), r.k.to_string(), num(r.kappa_hat)])
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrix_writes_header_only_files() {
        let cfg = BenchConfig::from_toml_str("schema = 1\n").unwrap();
        let out = run_benchmark_matrix(&cfg);
        assert!(!out.has_failures());
        let dir = tempfile::tempdir().unwrap();
        out.write_all(dir.path()).unwrap();
        let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(results, "variant,rel_subopt_pct,max_iter,median_iter,t_min_ms,t_max_ms,status\n");
        let traj = std::fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
        assert_eq!(traj, "variant,t,p,theta,s,omega,u\n");
        let con = std::fs::read_to_string(dir.path().join("contraction.csv")).unwrap();
        assert_eq!(con, "variant,theta0,k,kappa_hat\n");
    }

    #[test]
    fn shortest_round_trip_formatting() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(num(0.1), "0.1");
    }
}
