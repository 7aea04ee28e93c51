//! Closed-loop pendulum benchmark: plant simulation with an integrated cost
//! state, controller variants, timing protocol and CSV reports.

mod closed_loop;
mod config;
mod plant;
mod report;

pub use closed_loop::{relative_suboptimality, run_closed_loop, ClosedLoopResult, TimingSummary};
pub use config::{BenchConfig, HessianKind, Scenario, VariantConfig, WarmStart, SCHEMA_VERSION};
pub use plant::{CostAugmentedPendulum, Plant};
pub use report::{
    run_benchmark_matrix, run_contraction, write_contraction_csv, write_results_csv, write_trajectories_csv,
    ContractionRow, MatrixOutput, VariantOutcome, CONTRACTION_HEADER, RESULTS_HEADER, TRAJECTORIES_HEADER,
};
