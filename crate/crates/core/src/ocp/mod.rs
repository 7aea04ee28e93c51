//! Multiple-shooting discretization of the optimal control problem.

mod dare;
mod grid;
mod nlp;

pub use dare::{dare_residual, solve_dare, DareOptions};
pub use grid::Grid;
pub use nlp::{
    linearize, CostDiscretization, Linearizer, NlpIterate, OcpFormulation, QpData, QpStage,
};
