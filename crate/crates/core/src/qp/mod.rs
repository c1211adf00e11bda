//! The per-UAV trajectory optimization and the dense QP solver behind it.

mod problem;
mod solver;

pub use problem::{
    build_bvc, build_problem, verify_candidate, BvcHalfspace, OptimizationConfig, PlanningProblem,
    StateBox,
};
pub use solver::{
    kkt_residuals, solve, solve_with, KktResiduals, QuadraticProgram, Solution, SolveStatus,
    SolverSettings,
};
