//! Exact analytics: closed-form threshold policies, the relaxed problem and
//! dynamic programming on small joint spaces.

pub mod dp;
pub mod policy_cost;
pub mod relaxed;
pub mod threshold;

pub use dp::{
    indifference_subsidy, policy_evaluation, solve_subsidy_mdp, uniformization_rate, value_iteration, DpOptions,
    DpSolution, StateSpace, SubsidySolution,
};
pub use policy_cost::{exact_policy_cost, PolicyCost};
pub use relaxed::{relaxed_value, RelaxedProblem, RelaxedSolution};
pub use threshold::{
    best_threshold, expected_cost, passive_mass, stationary_dist, threshold_avg_cost, StationaryDist,
    ThresholdPolicy, ThresholdProfile,
};
