//! Nonlinear model predictive control by direct multiple shooting with
//! Gauss-Newton Runge-Kutta (GNRK) cost integration.
//!
//! The implicit Runge-Kutta integrator in [`irk`] propagates the dynamics
//! together with the integrated least-squares cost, its exact gradient and a
//! positive-semidefinite Gauss-Newton Hessian. [`ocp`] assembles the
//! multiple-shooting problem, [`qp`] solves the structured QP subproblems
//! and [`sqp`] runs full-step SQP or real-time iterations. [`bench`] holds
//! the closed-loop pendulum-on-cart benchmark.

pub mod bench;
pub mod butcher;
pub mod controller;
pub mod error;
pub mod irk;
pub mod model;
pub mod ocp;
pub mod pendulum;
pub mod penalty;
pub mod qp;
pub mod sqp;

pub use butcher::ButcherTableau;
pub use error::{Error, Result};
pub use irk::{IrkIntegrator, IrkSettings, StepOutput};
pub use model::{DynamicsModel, ResidualCost};
