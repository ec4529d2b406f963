//! Q-learning of Whittle indices from sampled single-service transitions.
//!
//! For a target state `s` two threshold policies are followed side by side:
//! threshold `s` (active iff `x >= s`) and threshold `s + 1`. Each keeps its
//! own Q table, updated on the fast timescale; the index iterate `W(s)` moves
//! once per episode towards the point where serving and idling at `s` cost
//! the same. Thresholds in this module use the "active iff `x >= R`"
//! convention; `R` here equals the passive-set threshold plus one.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cost, ServiceParams, SystemConfig};
use crate::sim::stream_rng;

/// Next state of the uniformized single-service chain with rate
/// `lambda + mu * s_max`.
pub fn embedded_transition<R: Rng + ?Sized>(params: &ServiceParams, s: usize, active: bool, rng: &mut R) -> usize {
    let s_max = params.s_max();
    let lam = if s < s_max { params.lambda() } else { 0.0 };
    let dep = if active { params.mu() * s as f64 } else { 0.0 };
    let u: f64 = rng.random::<f64>() * params.max_rate();
    if u < lam {
        s + 1
    } else if u < lam + dep {
        s - 1
    } else {
        s
    }
}

/// How the bootstrap target is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QMode {
    /// `C + Q(s', a')` as written, no average-cost correction.
    Literal,
    /// `C + Q(s', a') - mean_x Q(x, a_x)`: relative-value iteration, the
    /// reference being the average over states of the policy's own values.
    #[default]
    RelativeValue,
}

/// Q values over states `0..=s_max` and actions `{passive, active}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    values: Vec<[f64; 2]>,
}

impl QTable {
    pub fn zeros(s_max: usize) -> Self {
        QTable {
            values: vec![[0.0; 2]; s_max + 1],
        }
    }

    pub fn get(&self, s: usize, active: bool) -> f64 {
        self.values[s][active as usize]
    }

    pub fn set(&mut self, s: usize, active: bool, v: f64) {
        self.values[s][active as usize] = v;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.values
    }

    /// Greedy (cost-minimizing) action; ties go to passive.
    pub fn greedy(&self, s: usize) -> bool {
        self.values[s][1] < self.values[s][0]
    }

    pub fn min(&self, s: usize) -> f64 {
        self.values[s][0].min(self.values[s][1])
    }

    /// Mean of `Q(x, 1{x >= r})` over all states.
    pub fn policy_mean(&self, r: usize) -> f64 {
        let sum: f64 = self.values.iter().enumerate().map(|(x, q)| q[(x >= r) as usize]).sum();
        sum / self.values.len() as f64
    }

    /// Mean of `min_a Q(x, a)` over all states.
    pub fn greedy_mean(&self) -> f64 {
        (0..self.values.len()).map(|x| self.min(x)).sum::<f64>() / self.values.len() as f64
    }
}

/// The two tables used for target state `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTablePair {
    pub target: usize,
    /// Threshold `s`: state `s` is served.
    pub serve: QTable,
    /// Threshold `s + 1`: state `s` is left idle.
    pub idle: QTable,
}

impl QTablePair {
    pub fn new(target: usize, s_max: usize) -> Self {
        QTablePair {
            target,
            serve: QTable::zeros(s_max),
            idle: QTable::zeros(s_max),
        }
    }

    /// Subsidy-free cost difference between idling and serving at the
    /// target, evaluated under subsidy `w`.
    pub fn difference(&self, w: f64) -> f64 {
        self.idle.get(self.target, false) + w - self.serve.get(self.target, true)
    }
}

/// One sample under the threshold-`r` policy (active iff `x >= r`).
#[allow(clippy::too_many_arguments)]
pub fn q_update(
    table: &mut QTable,
    r: usize,
    s: usize,
    active: bool,
    next: usize,
    c: f64,
    w: f64,
    alpha: f64,
    mode: QMode,
) -> Result<()> {
    let expected = s >= r;
    if active != expected {
        return Err(Error::ThresholdContract {
            threshold: r,
            state: s,
            expected,
            got: active,
        });
    }
    let mut target = c + table.get(next, next >= r);
    if !active {
        target -= w;
    }
    if mode == QMode::RelativeValue {
        target -= table.policy_mean(r);
    }
    let old = table.get(s, active);
    table.set(s, active, (1.0 - alpha) * old + alpha * target);
    Ok(())
}

/// `(1 - gamma) w + gamma * diff`.
pub fn whittle_iterate(w: f64, diff: f64, gamma: f64) -> f64 {
    (1.0 - gamma) * w + gamma * diff
}

/// Step sizes: `alpha` per transition, `gamma` per episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSchedules {
    Constant { alpha: f64, gamma: f64 },
    /// `a0 / (1 + t / tau_alpha)` and `g0 / (1 + k / tau_gamma)`.
    Decaying {
        a0: f64,
        tau_alpha: f64,
        g0: f64,
        tau_gamma: f64,
    },
}

impl Default for RateSchedules {
    fn default() -> Self {
        RateSchedules::Constant {
            alpha: 0.01,
            gamma: 0.005,
        }
    }
}

impl RateSchedules {
    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            RateSchedules::Constant { alpha, .. } => alpha,
            RateSchedules::Decaying { a0, tau_alpha, .. } => a0 / (1.0 + t as f64 / tau_alpha),
        }
    }

    pub fn gamma(&self, k: u64) -> f64 {
        match *self {
            RateSchedules::Constant { gamma, .. } => gamma,
            RateSchedules::Decaying { g0, tau_gamma, .. } => g0 / (1.0 + k as f64 / tau_gamma),
        }
    }

    pub fn validated(self) -> Result<Self> {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        let good = match self {
            RateSchedules::Constant { alpha, gamma } => ok(alpha) && ok(gamma),
            RateSchedules::Decaying {
                a0,
                tau_alpha,
                g0,
                tau_gamma,
            } => ok(a0) && ok(g0) && tau_alpha > 0.0 && tau_gamma > 0.0,
        };
        if good {
            Ok(self)
        } else {
            Err(Error::invalid("schedules", "step sizes must lie in [0, 1], time constants must be positive"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLearnOptions {
    pub episodes: usize,
    pub horizon: usize,
    pub schedules: RateSchedules,
    pub mode: QMode,
    /// Initial index iterates, one per target state; zeros when absent.
    pub warm_start: Option<Vec<f64>>,
}

impl QLearnOptions {
    pub fn new(episodes: usize, horizon: usize) -> Self {
        QLearnOptions {
            episodes,
            horizon,
            schedules: RateSchedules::default(),
            mode: QMode::default(),
            warm_start: None,
        }
    }

    fn check(&self, params: &ServiceParams) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::invalid("episodes", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        self.schedules.validated()?;
        if let Some(w) = &self.warm_start {
            if w.len() != params.s_max() {
                return Err(Error::invalid("warm_start", "needs one value per state 0..s_max-1"));
            }
        }
        Ok(())
    }
}

/// Learned index table and per-episode iterates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexIterates {
    /// Final `W(s)` for `s = 0..s_max-1`.
    pub table: Vec<f64>,
    /// `history[k][s]`: iterate after the boundary update ending episode `k`.
    pub history: Vec<Vec<f64>>,
}

impl IndexIterates {
    fn from_columns(columns: Vec<Vec<f64>>) -> Self {
        let episodes = columns.first().map_or(0, Vec::len);
        let history: Vec<Vec<f64>> = (0..episodes).map(|k| columns.iter().map(|c| c[k]).collect()).collect();
        let table = history.last().cloned().unwrap_or_default();
        IndexIterates { table, history }
    }
}

/// Runs `horizon` steps of the threshold-`r` policy from state 0.
#[allow(clippy::too_many_arguments)]
fn run_trajectory<R: Rng + ?Sized>(
    params: &ServiceParams,
    table: &mut QTable,
    r: usize,
    w: f64,
    horizon: usize,
    schedules: &RateSchedules,
    mode: QMode,
    clock: &mut u64,
    rng: &mut R,
) -> Result<()> {
    let mut s = 0;
    for _ in 0..horizon {
        let a = s >= r;
        let next = embedded_transition(params, s, a, rng);
        q_update(table, r, s, a, next, cost(params, s), w, schedules.alpha(*clock), mode)?;
        *clock += 1;
        s = next;
    }
    Ok(())
}

/// Learns `W(s)` for one target state; returns the iterate after each
/// episode and the final tables.
pub fn learn_target(
    params: &ServiceParams,
    target: usize,
    opts: &QLearnOptions,
    seed: u64,
) -> Result<(Vec<f64>, QTablePair)> {
    opts.check(params)?;
    if target >= params.s_max() {
        return Err(Error::invalid("target", "must be below s_max"));
    }
    let mut rng = stream_rng(seed, target as u64);
    let mut pair = QTablePair::new(target, params.s_max());
    let mut w = opts.warm_start.as_ref().map_or(0.0, |v| v[target]);
    let mut trace = Vec::with_capacity(opts.episodes);
    let (mut t_serve, mut t_idle) = (0u64, 0u64);
    for k in 0..opts.episodes {
        run_trajectory(params, &mut pair.serve, target, w, opts.horizon, &opts.schedules, opts.mode, &mut t_serve, &mut rng)?;
        run_trajectory(params, &mut pair.idle, target + 1, w, opts.horizon, &opts.schedules, opts.mode, &mut t_idle, &mut rng)?;
        w = whittle_iterate(w, pair.difference(w), opts.schedules.gamma(k as u64));
        trace.push(w);
    }
    Ok((trace, pair))
}

/// Q-learning-Whittle for one service. Target states are learned in
/// parallel, each on its own random stream.
pub fn run_q_whittle(params: &ServiceParams, opts: &QLearnOptions, seed: u64) -> Result<IndexIterates> {
    opts.check(params)?;
    let columns = (0..params.s_max())
        .into_par_iter()
        .map(|s| learn_target(params, s, opts, seed).map(|(trace, _)| trace))
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexIterates::from_columns(columns))
}

/// Which probability the exploration parameter denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum GreedyConvention {
    /// Greedy with probability `epsilon`, uniform otherwise.
    #[default]
    GreedyWithEpsilon,
    /// Uniform with probability `epsilon`, greedy otherwise.
    ExploreWithEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOptions {
    pub learn: QLearnOptions,
    pub epsilon: f64,
    pub convention: GreedyConvention,
    /// Per-step index step size; defaults to `gamma / horizon`.
    pub index_step: Option<f64>,
}

impl BaselineOptions {
    pub fn new(episodes: usize, horizon: usize, epsilon: f64) -> Self {
        BaselineOptions {
            learn: QLearnOptions::new(episodes, horizon),
            epsilon,
            convention: GreedyConvention::default(),
            index_step: None,
        }
    }
}

fn baseline_target(params: &ServiceParams, target: usize, opts: &BaselineOptions, seed: u64) -> Result<Vec<f64>> {
    let lo = &opts.learn;
    let mut rng = stream_rng(seed, target as u64);
    let mut q = QTable::zeros(params.s_max());
    let mut w = lo.warm_start.as_ref().map_or(0.0, |v| v[target]);
    let greedy_prob = match opts.convention {
        GreedyConvention::GreedyWithEpsilon => opts.epsilon,
        GreedyConvention::ExploreWithEpsilon => 1.0 - opts.epsilon,
    };
    let mut trace = Vec::with_capacity(lo.episodes);
    let mut t = 0u64;
    for k in 0..lo.episodes {
        let step = opts
            .index_step
            .unwrap_or_else(|| lo.schedules.gamma(k as u64) / lo.horizon as f64);
        let mut s = 0;
        let mut a = false;
        for n in 0..lo.horizon {
            if n == 0 || !rng.random_bool(greedy_prob) {
                a = if n == 0 { q.greedy(0) } else { rng.random_bool(0.5) };
            }
            let next = embedded_transition(params, s, a, &mut rng);
            let next_a = if rng.random_bool(greedy_prob) { q.greedy(next) } else { rng.random_bool(0.5) };
            let mut target_v = cost(params, s) + q.min(next);
            if !a {
                target_v -= w;
            }
            if lo.mode == QMode::RelativeValue {
                target_v -= q.greedy_mean();
            }
            let alpha = lo.schedules.alpha(t);
            q.set(s, a, (1.0 - alpha) * q.get(s, a) + alpha * target_v);
            w += step * (q.get(target, false) - q.get(target, true));
            t += 1;
            s = next;
            a = next_a;
        }
        trace.push(w);
    }
    Ok(trace)
}

/// Coupled epsilon-greedy Q-learning with a per-step index update.
pub fn run_epsilon_greedy_baseline(params: &ServiceParams, opts: &BaselineOptions, seed: u64) -> Result<IndexIterates> {
    opts.learn.check(params)?;
    if !(opts.epsilon > 0.0 && opts.epsilon <= 1.0) {
        return Err(Error::invalid("epsilon", "must lie in (0, 1]"));
    }
    let columns = (0..params.s_max())
        .into_par_iter()
        .map(|s| baseline_target(params, s, opts, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexIterates::from_columns(columns))
}

/// Relative error of each learned entry; entries whose reference is below
/// `floor` are compared absolutely.
pub fn index_errors(learned: &[f64], reference: &[f64], floor: f64) -> Vec<f64> {
    learned
        .iter()
        .zip(reference)
        .map(|(&l, &r)| {
            if r.abs() < floor {
                (l - r).abs()
            } else {
                (l - r).abs() / r.abs()
            }
        })
        .collect()
}

/// First episode after which every state stays within `tol`; `None` if the
/// run never settles.
pub fn episodes_to_tolerance(history: &[Vec<f64>], reference: &[f64], tol: f64, floor: f64) -> Option<usize> {
    let mut first = None;
    for (k, w) in history.iter().enumerate() {
        let ok = index_errors(w, reference, floor).iter().all(|&e| e <= tol);
        match (ok, first) {
            (true, None) => first = Some(k + 1),
            (false, _) => first = None,
            _ => {}
        }
    }
    first
}

/// Partitions service ids into consecutive groups of at most `K`; groups
/// learn one after another, services inside a group concurrently.
pub fn group_scheduler(config: &SystemConfig) -> Vec<Vec<usize>> {
    let ids: Vec<usize> = (0..config.len()).collect();
    ids.chunks(config.capacity()).map(<[usize]>::to_vec).collect()
}

/// Learns every service's table following [`group_scheduler`]. Service `i`
/// uses seed `seed + i`.
pub fn learn_system(config: &SystemConfig, opts: &QLearnOptions, seed: u64) -> Result<Vec<IndexIterates>> {
    let mut out = Vec::with_capacity(config.len());
    for group in group_scheduler(config) {
        let learned = group
            .par_iter()
            .map(|&i| run_q_whittle(config.service(i), opts, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        out.extend(learned);
    }
    Ok(out)
}

/// Baseline counterpart of [`learn_system`].
pub fn learn_system_baseline(config: &SystemConfig, opts: &BaselineOptions, seed: u64) -> Result<Vec<IndexIterates>> {
    let mut out = Vec::with_capacity(config.len());
    for group in group_scheduler(config) {
        let learned = group
            .par_iter()
            .map(|&i| run_epsilon_greedy_baseline(config.service(i), opts, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        out.extend(learned);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params() -> ServiceParams {
        ServiceParams::new(10.0, 5.0, 5).unwrap()
    }

    #[test]
    fn embedded_moves() {
        let p = params();
        let mut rng = stream_rng(1, 0);
        for _ in 0..1000 {
            assert!(embedded_transition(&p, 0, true, &mut rng) <= 1);
            let n = embedded_transition(&p, 3, false, &mut rng);
            assert!(n == 3 || n == 4);
            assert!(embedded_transition(&p, 5, true, &mut rng) <= 5);
        }
    }

    #[test]
    fn embedded_kernel_frequencies() {
        let p = params();
        let mut rng = stream_rng(2, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[embedded_transition(&p, 2, true, &mut rng) + 1 - 2] += 1;
        }
        let lam = 10.0 / 35.0;
        let dep = 10.0 / 35.0;
        let probs = [dep, 1.0 - lam - dep, lam];
        for (c, q) in counts.iter().zip(probs) {
            let sd = (n as f64 * q * (1.0 - q)).sqrt();
            assert!((*c as f64 - n as f64 * q).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn update_algebra() {
        let mut t = QTable::zeros(5);
        q_update(&mut t, 4, 2, false, 3, 0.3, 0.1, 0.01, QMode::Literal).unwrap();
        assert_relative_eq!(t.get(2, false), 0.002);
        let mut t = QTable::zeros(5);
        q_update(&mut t, 1, 2, true, 1, 0.3, 0.1, 0.01, QMode::RelativeValue).unwrap();
        assert_relative_eq!(t.get(2, true), 0.003);
        let before = t.clone();
        q_update(&mut t, 1, 2, true, 1, 0.3, 0.1, 0.0, QMode::Literal).unwrap();
        assert_eq!(t, before);
    }

    #[test]
    fn contract_violation() {
        let mut t = QTable::zeros(5);
        let err = q_update(&mut t, 3, 1, true, 2, 0.1, 0.0, 0.5, QMode::Literal).unwrap_err();
        assert!(matches!(
            err,
            Error::ThresholdContract {
                threshold: 3,
                state: 1,
                expected: false,
                got: true
            }
        ));
    }

    #[test]
    fn iterate_algebra() {
        assert_relative_eq!(whittle_iterate(0.0, 1.0, 0.005), 0.005);
        assert_eq!(whittle_iterate(0.7, 3.0, 0.0), 0.7);
        assert_relative_eq!(whittle_iterate(0.4, 0.4, 0.3), 0.4);
    }

    #[test]
    fn sparsity_contract() {
        let p = params();
        let opts = QLearnOptions::new(20, 100);
        for target in 0..p.s_max() {
            let (_, pair) = learn_target(&p, target, &opts, 9).unwrap();
            for (table, r) in [(&pair.serve, target), (&pair.idle, target + 1)] {
                for x in 0..=p.s_max() {
                    if x >= r {
                        assert_eq!(table.get(x, false), 0.0);
                    } else {
                        assert_eq!(table.get(x, true), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn state_zero_index_stays_zero() {
        let r = run_q_whittle(&params(), &QLearnOptions::new(30, 100), 4).unwrap();
        assert!(r.table[0].abs() < 0.05, "{:?}", r.table);
    }

    #[test]
    fn deterministic_replay() {
        let p = params();
        let a = run_q_whittle(&p, &QLearnOptions::new(10, 50), 11).unwrap();
        let b = run_q_whittle(&p, &QLearnOptions::new(10, 50), 11).unwrap();
        assert_eq!(a, b);
        let o = BaselineOptions::new(10, 50, 0.5);
        assert_eq!(
            run_epsilon_greedy_baseline(&p, &o, 3).unwrap(),
            run_epsilon_greedy_baseline(&p, &o, 3).unwrap()
        );
        assert_eq!(a.history.len(), 10);
        assert_eq!(a.table.len(), 5);
    }

    #[test]
    fn learned_indices_approach_indifference_points() {
        let p = ServiceParams::new(10.0, 5.0, 5).unwrap();
        // indifference between thresholds s-1 and s, including the dip at the top
        let mut truth = vec![0.0];
        truth.extend((0..4).map(|r| crate::whittle::whittle_index_raw(&p, r).unwrap()));
        let mut opts = QLearnOptions::new(4000, 100);
        opts.schedules = RateSchedules::Decaying {
            a0: 0.02,
            tau_alpha: 2e4,
            g0: 0.05,
            tau_gamma: 500.0,
        };
        let r = run_q_whittle(&p, &opts, 21).unwrap();
        let errs = index_errors(&r.table, &truth, 1e-3);
        assert!(errs.iter().all(|&e| e < 0.1), "{:?} vs {truth:?}", r.table);
    }

    #[test]
    fn tolerance_crossing() {
        let h = vec![vec![0.0], vec![0.95], vec![0.8], vec![0.99], vec![1.0]];
        assert_eq!(episodes_to_tolerance(&h, &[1.0], 0.1, 1e-6), Some(4));
        assert_eq!(episodes_to_tolerance(&h[..3], &[1.0], 0.1, 1e-6), None);
    }

    #[test]
    fn groups() {
        let p = params();
        let c = SystemConfig::new(vec![p; 10], 5).unwrap();
        assert_eq!(group_scheduler(&c), vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]]);
        let c = SystemConfig::new(vec![p; 3], 3).unwrap();
        assert_eq!(group_scheduler(&c).len(), 1);
    }

    proptest! {
        #[test]
        fn groups_partition(n in 1usize..40, k_frac in 0.0f64..1.0) {
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let c = SystemConfig::new(vec![params(); n], k).unwrap();
            let g = group_scheduler(&c);
            prop_assert_eq!(g.len(), n.div_ceil(k));
            let mut all: Vec<usize> = g.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(g.iter().all(|x| x.len() <= k));
        }

        #[test]
        fn passive_updates_leave_active_column(r in 1usize..6, s_frac in 0.0f64..1.0, c in 0.0f64..2.0) {
            let s = ((r as f64) * s_frac) as usize;
            let s = s.min(r - 1);
            let mut t = QTable::zeros(5);
            q_update(&mut t, r, s, false, (s + 1).min(5), c, 0.2, 0.1, QMode::RelativeValue).unwrap();
            for x in 0..=5 {
                prop_assert_eq!(t.get(x, true), 0.0);
            }
        }
    }
}
