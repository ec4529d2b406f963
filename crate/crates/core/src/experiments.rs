//! Drivers for the numerical experiments: optimality gaps of the index rule,
//! switching curves, learning convergence and the cost error of learned
//! policies as the system grows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{exact_policy_cost, value_iteration, DpOptions};
use crate::model::{ServiceParams, SystemConfig, SystemState};
use crate::policy::PlacementPolicy;
use crate::qlearn::{
    episodes_to_tolerance, learn_system, learn_system_baseline, run_epsilon_greedy_baseline, run_q_whittle,
    BaselineOptions, IndexIterates, QLearnOptions,
};
use crate::sim::{run_policy, stream_rng, RunOptions};
use crate::ucb::{run_ucb_whittle, CandidateSet, RelaxedCosts, UcbConfig, UcbRun};
use crate::whittle::{index_rule_action, whittle_table, whittle_tables, WhittlePolicy, WhittleTable};

/// Reported optimality gaps (%) for load ratios 1 to 7.
pub const TABLE1_REFERENCE: [f64; 7] = [4.46, 3.35, 3.11, 1.06, 1.231, 0.706, 2.55];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub ratio: usize,
    pub s_max: usize,
    pub optimal_cost: f64,
    pub whittle_cost: f64,
    pub gap_percent: f64,
    pub reference_percent: f64,
}

/// Two identical services with `mu = 5`, `lambda = ratio * mu`, one slot.
pub fn table1_config(ratio: usize, s_max: usize) -> Result<SystemConfig> {
    let p = ServiceParams::new(5.0 * ratio as f64, 5.0, s_max)?;
    SystemConfig::new(vec![p, p], 1)
}

/// Relative gap of the index rule against the optimal average cost.
pub fn run_table1(s_max: usize, opts: &DpOptions) -> Result<Vec<Table1Row>> {
    (1..=7usize)
        .into_par_iter()
        .map(|ratio| {
            let config = table1_config(ratio, s_max)?;
            let optimal = value_iteration(&config, opts)?.average_cost();
            let policy = WhittlePolicy::for_config(&config)?;
            let whittle = exact_policy_cost(&config, &policy, opts)?.average_cost;
            Ok(Table1Row {
                ratio,
                s_max,
                optimal_cost: optimal,
                whittle_cost: whittle,
                gap_percent: 100.0 * (whittle - optimal) / optimal,
                reference_percent: TABLE1_REFERENCE[ratio - 1],
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchingPoint {
    pub s1: usize,
    pub s2: usize,
    /// Served service, `None` when idle.
    pub optimal: Option<usize>,
    pub whittle: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchingCurve {
    pub points: Vec<SwitchingPoint>,
    pub agreement: f64,
}

/// `lambda_i = ratio_i * mu` with `mu = 5`, one slot.
pub fn switching_config(ratio1: f64, ratio2: f64, s_max: usize) -> Result<SystemConfig> {
    SystemConfig::new(
        vec![
            ServiceParams::new(5.0 * ratio1, 5.0, s_max)?,
            ServiceParams::new(5.0 * ratio2, 5.0, s_max)?,
        ],
        1,
    )
}

fn served(action: &crate::model::PlacementAction) -> Option<usize> {
    action.active().next()
}

/// Served service in every joint state of a two-service, one-slot system,
/// under the optimal policy and under the index rule.
pub fn run_switching_curve(config: &SystemConfig, opts: &DpOptions) -> Result<SwitchingCurve> {
    if config.len() != 2 || config.capacity() != 1 {
        return Err(Error::invalid("config", "switching curves need N = 2 and K = 1"));
    }
    let dp = value_iteration(config, opts)?;
    let tables = whittle_tables(config)?;
    let mut points = Vec::new();
    for s1 in 0..=config.service(0).s_max() {
        for s2 in 0..=config.service(1).s_max() {
            let state = SystemState::new(vec![s1, s2]);
            points.push(SwitchingPoint {
                s1,
                s2,
                optimal: served(&dp.optimal_action(&state)),
                whittle: served(&index_rule_action(&tables, &state, 1)),
            });
        }
    }
    let agree = points.iter().filter(|p| p.optimal == p.whittle).count();
    Ok(SwitchingCurve {
        agreement: agree as f64 / points.len() as f64,
        points,
    })
}

/// Settings shared by the learning experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningSetup {
    pub episodes: usize,
    pub horizon: usize,
    pub q: QLearnOptions,
    pub baseline: BaselineOptions,
    /// Overrides the theorem value of `K1` when set.
    pub ucb_k1: Option<f64>,
    pub lambda_factors: Vec<f64>,
    pub mu_factors: Vec<f64>,
    pub benchmark_episodes: usize,
}

impl LearningSetup {
    /// `H = 100`, `alpha = 0.01`, `gamma = 0.005`, greedy probability 0.5 for
    /// the baseline and a 3 x 3 grid of multipliers {2/3, 1, 3/2}.
    pub fn standard(episodes: usize) -> Self {
        LearningSetup {
            episodes,
            horizon: 100,
            q: QLearnOptions::new(episodes, 100),
            baseline: BaselineOptions::new(episodes, 100, 0.5),
            ucb_k1: None,
            lambda_factors: vec![2.0 / 3.0, 1.0, 1.5],
            mu_factors: vec![2.0 / 3.0, 1.0, 1.5],
            benchmark_episodes: crate::sim::BENCHMARK_EPISODES,
        }
    }

    fn with_episodes(&self) -> (QLearnOptions, BaselineOptions) {
        let mut q = self.q.clone();
        q.episodes = self.episodes;
        q.horizon = self.horizon;
        let mut b = self.baseline.clone();
        b.learn.episodes = self.episodes;
        b.learn.horizon = self.horizon;
        (q, b)
    }

    pub fn ucb_config(&self, candidates: &CandidateSet) -> Result<UcbConfig> {
        let cfg = UcbConfig::theorem_defaults((self.episodes * self.horizon) as u64, candidates.min_rate())?;
        match self.ucb_k1 {
            Some(k1) => cfg.with_k1(k1),
            None => Ok(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerTrace {
    pub learner: String,
    /// `history[k][s]`: index estimate after episode `k`.
    pub history: Vec<Vec<f64>>,
    pub episodes_to_tolerance: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub truth: Vec<f64>,
    pub traces: Vec<LearnerTrace>,
    pub selected: Vec<usize>,
}

/// Relative error threshold and floor below which errors are absolute.
pub const CONVERGENCE_TOLERANCE: f64 = 0.1;
pub const ERROR_FLOOR: f64 = 1e-3;

/// Index traces of the three learners for service 0 of `config`.
///
/// UCB-Whittle runs on the whole system with a candidate grid shared by all
/// services of equal parameters; its trace is the table of the selected
/// candidate. The Q-learners only see service 0.
pub fn run_convergence(config: &SystemConfig, setup: &LearningSetup, seed: u64) -> Result<ConvergenceResult> {
    let p = config.service(0);
    let truth = whittle_table(p)?;
    let (q, b) = setup.with_episodes();
    let qw = run_q_whittle(p, &q, seed)?;
    let base = run_epsilon_greedy_baseline(p, &b, seed)?;

    let type_of = service_types(config);
    let candidates = CandidateSet::grid_around(config, type_of, &setup.lambda_factors, &setup.mu_factors)?;
    let costs = RelaxedCosts::compute(&candidates, config)?;
    let cfg = setup.ucb_config(&candidates)?;
    let run = UcbRun {
        episodes: setup.episodes,
        horizon: setup.horizon,
        seed,
        benchmark_episodes: setup.benchmark_episodes,
    };
    let rep = run_ucb_whittle(config, &candidates, &cfg, &costs, &run, None)?;
    let ucb_history: Vec<Vec<f64>> = rep
        .selected
        .iter()
        .map(|&id| rep.tables_of(id).expect("selected tables are cached")[0].values().to_vec())
        .collect();

    let trace = |name: &str, history: Vec<Vec<f64>>| LearnerTrace {
        learner: name.to_string(),
        episodes_to_tolerance: episodes_to_tolerance(&history, truth.values(), CONVERGENCE_TOLERANCE, ERROR_FLOOR),
        history,
    };
    Ok(ConvergenceResult {
        truth: truth.values().to_vec(),
        traces: vec![
            trace("ucb-whittle", ucb_history),
            trace("q-whittle", qw.history),
            trace("epsilon-greedy", base.history),
        ],
        selected: rep.selected,
    })
}

/// Services with identical parameters share a type, numbered by first
/// appearance.
pub fn service_types(config: &SystemConfig) -> Vec<usize> {
    let mut reps: Vec<&ServiceParams> = Vec::new();
    config
        .services()
        .iter()
        .map(|p| match reps.iter().position(|r| *r == p) {
            Some(t) => t,
            None => {
                reps.push(p);
                reps.len() - 1
            }
        })
        .collect()
}

/// Arrival rates of the five service types.
pub const MSE_LAMBDAS: [f64; 5] = [10.0, 15.0, 20.0, 25.0, 30.0];

/// `n` services split evenly over the five types (`mu = 5`), `K = n / 2`.
pub fn mse_config(n: usize, s_max: usize) -> Result<SystemConfig> {
    if n < MSE_LAMBDAS.len() {
        return Err(Error::invalid("n", "needs at least one service per type"));
    }
    let services = (0..n)
        .map(|i| ServiceParams::new(MSE_LAMBDAS[i * MSE_LAMBDAS.len() / n], 5.0, s_max))
        .collect::<Result<Vec<_>>>()?;
    SystemConfig::new(services, (n / 2).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsePoint {
    pub n: usize,
    pub learner: String,
    pub mse: f64,
    /// Per-replication difference of per-service average cost.
    pub differences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSettings {
    pub s_max: usize,
    pub replications: usize,
    /// Evaluation events per service.
    pub eval_events_per_service: u64,
}

impl Default for MseSettings {
    fn default() -> Self {
        MseSettings {
            s_max: 5,
            replications: 5,
            eval_events_per_service: 2000,
        }
    }
}

fn policy_cost<P: PlacementPolicy + ?Sized>(config: &SystemConfig, policy: &P, events: u64, seed: u64) -> Result<f64> {
    let mut rng = stream_rng(seed, 0);
    Ok(run_policy(config, policy, events, &mut rng, RunOptions::default())?.average_cost / config.len() as f64)
}

fn learned_policy(iterates: &[IndexIterates], capacity: usize) -> WhittlePolicy {
    WhittlePolicy::new(
        iterates.iter().map(|it| WhittleTable::learned(it.table.clone())).collect(),
        capacity,
    )
}

/// Mean squared difference between the per-service average cost of each
/// learned policy and of the true index policy, over replications. Both
/// policies of a replication are simulated on the same random stream.
pub fn run_mse_vs_n(ns: &[usize], setup: &LearningSetup, settings: &MseSettings, seed: u64) -> Result<Vec<MsePoint>> {
    let mut out = Vec::new();
    for &n in ns {
        let config = mse_config(n, settings.s_max)?;
        let truth_policy = WhittlePolicy::for_config(&config)?;
        let candidates =
            CandidateSet::grid_around(&config, service_types(&config), &setup.lambda_factors, &setup.mu_factors)?;
        let costs = RelaxedCosts::compute(&candidates, &config)?;
        let cfg = setup.ucb_config(&candidates)?;
        let (q, b) = setup.with_episodes();
        let events = settings.eval_events_per_service * n as u64;
        let reps = (0..settings.replications)
            .map(|r| {
                let rseed = seed.wrapping_add(1_000_003 * (r as u64 + 1)).wrapping_add(n as u64);
                let run = UcbRun {
                    episodes: setup.episodes,
                    horizon: setup.horizon,
                    seed: rseed,
                    benchmark_episodes: setup.benchmark_episodes,
                };
                let rep = run_ucb_whittle(&config, &candidates, &cfg, &costs, &run, Some(0.0))?;
                let last = *rep.selected.last().expect("at least one episode");
                let ucb_policy = WhittlePolicy::new(
                    rep.tables_of(last).expect("selected tables are cached").to_vec(),
                    config.capacity(),
                );
                let q_policy = learned_policy(&learn_system(&config, &q, rseed)?, config.capacity());
                let b_policy = learned_policy(&learn_system_baseline(&config, &b, rseed)?, config.capacity());
                let eval_seed = rseed ^ 0x5EED;
                let reference = policy_cost(&config, &truth_policy, events, eval_seed)?;
                Ok([
                    policy_cost(&config, &ucb_policy, events, eval_seed)? - reference,
                    policy_cost(&config, &q_policy, events, eval_seed)? - reference,
                    policy_cost(&config, &b_policy, events, eval_seed)? - reference,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, name) in ["ucb-whittle", "q-whittle", "epsilon-greedy"].iter().enumerate() {
            let differences: Vec<f64> = reps.iter().map(|d| d[k]).collect();
            let mse = differences.iter().map(|d| d * d).sum::<f64>() / differences.len() as f64;
            out.push(MsePoint {
                n,
                learner: name.to_string(),
                mse,
                differences,
            });
        }
    }
    Ok(out)
}
