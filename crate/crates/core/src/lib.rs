//! Whittle-index placement of services on a capacity-limited edge server.

pub mod error;
pub mod exact;
pub mod experiments;
pub mod model;
pub mod policy;
pub mod qlearn;
pub mod sim;
pub mod ucb;
pub mod whittle;

pub use error::{Error, Result};
pub use exact::{exact_policy_cost, relaxed_value, value_iteration, DpOptions, DpSolution};
pub use model::{cost, rates, PlacementAction, Rates, ServiceParams, SystemConfig, SystemState};
pub use policy::{FnPolicy, PlacementPolicy, ThresholdPlacement};
pub use qlearn::{run_epsilon_greedy_baseline, run_q_whittle, QLearnOptions, RateSchedules};
pub use sim::{run_policy, stream_rng, RunSummary};
pub use ucb::{run_ucb_whittle, CandidateSet, UcbConfig};
pub use whittle::{index_rule_action, whittle_index_raw, whittle_table, WhittlePolicy, WhittleTable};
