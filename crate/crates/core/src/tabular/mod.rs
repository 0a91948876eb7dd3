//! Exact finite-horizon analysis of the entropy-constrained objective.
//!
//! Everything here is undiscounted and tabular: a [`FiniteMdp`] with decision
//! steps `0..=T`, per-step policies and temperatures, exact marginals, the two
//! soft Q recursions, the per-step Lagrangian dual and a grid-search primal
//! oracle that certifies the dual value.

mod brute;
mod dual;
mod mdp;
mod policy;
mod recursion;
mod report;

use thiserror::Error;

pub use brute::{brute_force_primal, grid_points, PrimalSearch, PrimalSolution, BRUTE_FORCE_LIMIT, MARGINAL_DP_LIMIT};
pub use dual::{
    check_target_entropy, dual_function, dual_solve, dual_solve_step, max_entropy, soft_backward, state_entropies,
    DualSolution, SoftSolution, StepSolution, ALPHA_BRACKET, GAP_TOLERANCE, MAX_SWEEPS, SWEEP_TOLERANCE,
};
pub use mdp::{FiniteMdp, MdpDocument};
pub use policy::{
    boltzmann_policy, entropy, greedy_policy, marginals, policy_entropy_terms, EntropyGap, Marginals, PolicyTable,
};
pub use recursion::{evaluate_recursion, QTable, TemperatureSchedule};
pub use report::{verify_duality_report, DualityReport, DEFAULT_GRID_RESOLUTION};

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("target entropy {target_entropy} exceeds the maximum achievable entropy log(n_actions) = {bound}")]
    Infeasible { target_entropy: f64, bound: f64 },
    #[error("brute-force search needs {evaluations} evaluations, limit is {limit}")]
    Size { evaluations: f64, limit: f64 },
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
    #[error("MDP document: {0}")]
    Json(#[from] serde_json::Error),
}
