//! Average-cost dynamic programming on the truncated joint state space.
//!
//! The continuous-time problem is uniformized at the constant rate
//! `sum_i lambda_i + sum_i mu_i * s_max_i` and solved by relative value
//! iteration. Values are kept in time units so that `Lambda * (V_{t+1} - V_t)`
//! brackets the optimal average cost directly.

use crate::error::{Error, Result};
use crate::model::{cost, rates, PlacementAction, ServiceParams, SystemConfig, SystemState};
use crate::policy::PlacementPolicy;

/// Mixed-radix enumeration of the joint queue vectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl StateSpace {
    pub fn new(config: &SystemConfig) -> Self {
        let dims: Vec<usize> = config.services().iter().map(|p| p.s_max() + 1).collect();
        let mut strides = vec![0; dims.len()];
        let mut size = 1usize;
        for (stride, &d) in strides.iter_mut().zip(&dims) {
            *stride = size;
            size = size.saturating_mul(d);
        }
        StateSpace { dims, strides, size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self, i: usize) -> usize {
        self.strides[i]
    }

    pub fn encode(&self, queues: &[usize]) -> usize {
        queues.iter().zip(&self.strides).map(|(&s, &st)| s * st).sum()
    }

    pub fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for (slot, &d) in out.iter_mut().zip(&self.dims) {
            *slot = index % d;
            index /= d;
        }
    }

    pub fn decode(&self, index: usize) -> SystemState {
        let mut q = vec![0; self.dims.len()];
        self.decode_into(index, &mut q);
        SystemState::new(q)
    }

    pub fn states(&self) -> impl Iterator<Item = SystemState> + '_ {
        (0..self.size).map(|i| self.decode(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpOptions {
    /// Stop once `Lambda * span(V_{t+1} - V_t)` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_states: usize,
}

impl Default for DpOptions {
    fn default() -> Self {
        DpOptions {
            tolerance: 1e-9,
            max_iterations: 5_000_000,
            max_states: 250_000,
        }
    }
}

impl DpOptions {
    pub(crate) fn check_budget(&self, space: &StateSpace) -> Result<()> {
        if space.size() > self.max_states {
            return Err(Error::BudgetExceeded {
                states: space.size(),
                budget: self.max_states,
            });
        }
        Ok(())
    }
}

/// Solution of the average-cost optimality equation.
#[derive(Debug, Clone)]
pub struct DpSolution {
    space: StateSpace,
    average_cost: f64,
    values: Vec<f64>,
    actions: Vec<u32>,
    iterations: usize,
    span: f64,
}

impl DpSolution {
    /// Optimal long-run average cost `f`.
    pub fn average_cost(&self) -> f64 {
        self.average_cost
    }

    /// Relative values, normalized to zero at the empty state.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, state: &SystemState) -> f64 {
        self.values[self.space.encode(state.queues())]
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn final_span(&self) -> f64 {
        self.span
    }

    /// Active-set bitmask chosen at each encoded state.
    pub fn action_masks(&self) -> &[u32] {
        &self.actions
    }

    pub fn optimal_action(&self, state: &SystemState) -> PlacementAction {
        let mask = self.actions[self.space.encode(state.queues())];
        mask_to_action(mask, state.len())
    }
}

impl PlacementPolicy for DpSolution {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        let mask = self.actions[self.space.encode(state.queues())];
        for i in 0..state.len() {
            if mask & (1 << i) != 0 {
                out.set(i, true);
            }
        }
    }
}

pub(crate) fn mask_to_action(mask: u32, n: usize) -> PlacementAction {
    PlacementAction::new((0..n).map(|i| mask & (1 << i) != 0).collect())
}

/// Per-state transition structure shared by the solvers.
pub(crate) struct Transitions {
    pub cost: Vec<f64>,
    /// `(target, rate)` for every arrival out of the state.
    pub births: Vec<Vec<(usize, f64)>>,
    /// `deaths[x][i]`: `(target, rate)` if service `i` is served at `x`.
    pub deaths: Vec<Vec<Option<(usize, f64)>>>,
    /// Bitmask of nonempty queues.
    pub nonempty: Vec<u32>,
}

impl Transitions {
    pub fn build(config: &SystemConfig, space: &StateSpace) -> Self {
        let n = config.len();
        let mut q = vec![0; n];
        let mut cost_v = Vec::with_capacity(space.size());
        let mut births = Vec::with_capacity(space.size());
        let mut deaths = Vec::with_capacity(space.size());
        let mut nonempty = Vec::with_capacity(space.size());
        for x in 0..space.size() {
            space.decode_into(x, &mut q);
            let mut c = 0.0;
            let mut b = Vec::with_capacity(n);
            let mut d = Vec::with_capacity(n);
            let mut mask = 0u32;
            for (i, p) in config.services().iter().enumerate() {
                c += cost(p, q[i]);
                let r = rates(p, q[i], true);
                if r.birth > 0.0 {
                    b.push((x + space.stride(i), r.birth));
                }
                if r.death > 0.0 {
                    d.push(Some((x - space.stride(i), r.death)));
                    mask |= 1 << i;
                } else {
                    d.push(None);
                }
            }
            cost_v.push(c);
            births.push(b);
            deaths.push(d);
            nonempty.push(mask);
        }
        Transitions {
            cost: cost_v,
            births,
            deaths,
            nonempty,
        }
    }
}

/// Feasible active sets in evaluation order: larger sets first, then
/// lexicographic by service id, so ties resolve toward serving and toward
/// smaller ids.
fn candidate_masks(n: usize, capacity: usize) -> Vec<u32> {
    let mut masks: Vec<u32> = (0u32..(1 << n))
        .filter(|m| m.count_ones() as usize <= capacity)
        .collect();
    masks.sort_by_key(|&m| {
        let ids: Vec<u32> = (0..n as u32).filter(|i| m & (1 << i) != 0).collect();
        (std::cmp::Reverse(m.count_ones()), ids)
    });
    masks
}

/// Uniformization constant `sum_i lambda_i + sum_i mu_i * s_max_i`.
pub fn uniformization_rate(config: &SystemConfig) -> f64 {
    config.max_total_rate()
}

/// Relative value iteration for the coupled N-service problem.
pub fn value_iteration(config: &SystemConfig, opts: &DpOptions) -> Result<DpSolution> {
    if config.len() > 16 {
        return Err(Error::invalid("services", "value iteration supports at most 16 services"));
    }
    let space = StateSpace::new(config);
    opts.check_budget(&space)?;
    let trans = Transitions::build(config, &space);
    let big_lambda = uniformization_rate(config);
    let masks = candidate_masks(config.len(), config.capacity());

    let size = space.size();
    let mut v = vec![0.0; size];
    let mut next = vec![0.0; size];
    let mut actions = vec![0u32; size];
    let mut span = f64::INFINITY;

    for it in 1..=opts.max_iterations {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in 0..size {
            let vx = v[x];
            let mut base = trans.cost[x];
            for &(y, r) in &trans.births[x] {
                base += r * (v[y] - vx);
            }
            let nonempty = trans.nonempty[x];
            let mut best = f64::INFINITY;
            let mut best_mask = u32::MAX;
            for &m in &masks {
                // Serving an empty queue is equivalent to leaving it passive.
                if m & !nonempty != 0 {
                    continue;
                }
                let mut drift = base;
                let mut bits = m;
                while bits != 0 {
                    let i = bits.trailing_zeros() as usize;
                    bits &= bits - 1;
                    if let Some((y, r)) = trans.deaths[x][i] {
                        drift += r * (v[y] - vx);
                    }
                }
                if best_mask == u32::MAX || drift < best - 1e-12 * (1.0 + best.abs()) {
                    best = drift;
                    best_mask = m;
                }
            }
            // `best` is the rate of change; its span brackets f.
            lo = lo.min(best);
            hi = hi.max(best);
            next[x] = vx + best / big_lambda;
            actions[x] = best_mask;
        }
        span = hi - lo;
        let reference = next[0];
        for (dst, src) in v.iter_mut().zip(&next) {
            *dst = src - reference;
        }
        if span < opts.tolerance {
            return Ok(DpSolution {
                space,
                average_cost: 0.5 * (lo + hi),
                values: v,
                actions,
                iterations: it,
                span,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        span,
    })
}

/// Relative value iteration for a fixed stationary policy.
pub fn policy_evaluation<P: PlacementPolicy + ?Sized>(
    config: &SystemConfig,
    policy: &P,
    opts: &DpOptions,
) -> Result<f64> {
    let space = StateSpace::new(config);
    opts.check_budget(&space)?;
    let trans = Transitions::build(config, &space);
    let big_lambda = uniformization_rate(config);
    let size = space.size();
    let mut masks = vec![0u32; size];
    let mut a = PlacementAction::none(config.len());
    for (x, mask) in masks.iter_mut().enumerate() {
        let state = space.decode(x);
        a.clear();
        policy.decide(&state, &mut a);
        config.check_action(&a)?;
        *mask = a.active().fold(0, |m, i| m | (1 << i));
    }
    let mut v = vec![0.0; size];
    let mut next = vec![0.0; size];
    let mut span = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in 0..size {
            let vx = v[x];
            let mut drift = trans.cost[x];
            for &(y, r) in &trans.births[x] {
                drift += r * (v[y] - vx);
            }
            let mut bits = masks[x];
            while bits != 0 {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                if let Some((y, r)) = trans.deaths[x][i] {
                    drift += r * (v[y] - vx);
                }
            }
            lo = lo.min(drift);
            hi = hi.max(drift);
            next[x] = vx + drift / big_lambda;
        }
        span = hi - lo;
        let reference = next[0];
        for (dst, src) in v.iter_mut().zip(&next) {
            *dst = src - reference;
        }
        if span < opts.tolerance {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        span,
    })
}

/// Solution of the single-service problem with passivity subsidy `w`.
#[derive(Debug, Clone)]
pub struct SubsidySolution {
    pub subsidy: f64,
    pub gain: f64,
    /// Relative values, zero at the empty queue.
    pub values: Vec<f64>,
    /// Rate-form action values: `C(s) - w[a=0] + sum_y r (h(y) - h(s))`.
    pub q_passive: Vec<f64>,
    pub q_active: Vec<f64>,
}

impl SubsidySolution {
    /// Optimal action at `s`; indifference resolves to active.
    pub fn is_active(&self, s: usize) -> bool {
        self.q_active[s] <= self.q_passive[s]
    }

    /// `Q(s, passive) - Q(s, active)`; zero at the indifference subsidy.
    pub fn advantage(&self, s: usize) -> f64 {
        self.q_passive[s] - self.q_active[s]
    }
}

/// Relative value iteration for one service whose passive action earns `w`
/// per unit time.
pub fn solve_subsidy_mdp(params: &ServiceParams, w: f64, opts: &DpOptions) -> Result<SubsidySolution> {
    let n = params.s_max() + 1;
    let big_lambda = params.max_rate();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut span = f64::INFINITY;
    let q_pair = |h: &[f64], s: usize| {
        let r_passive = rates(params, s, false);
        let r_active = rates(params, s, true);
        let c = cost(params, s);
        let up = if s + 1 < n { h[s + 1] - h[s] } else { 0.0 };
        let down = if s > 0 { h[s - 1] - h[s] } else { 0.0 };
        let qp = c - w + r_passive.birth * up;
        let qa = c + r_active.birth * up + r_active.death * down;
        (qp, qa)
    };
    for it in 1..=opts.max_iterations {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in 0..n {
            let (qp, qa) = q_pair(&h, s);
            let best = qp.min(qa);
            lo = lo.min(best);
            hi = hi.max(best);
            next[s] = h[s] + best / big_lambda;
        }
        span = hi - lo;
        let reference = next[0];
        for (dst, src) in h.iter_mut().zip(&next) {
            *dst = src - reference;
        }
        if span < opts.tolerance {
            let (q_passive, q_active): (Vec<f64>, Vec<f64>) = (0..n).map(|s| q_pair(&h, s)).unzip();
            let _ = it;
            return Ok(SubsidySolution {
                subsidy: w,
                gain: 0.5 * (lo + hi),
                values: h,
                q_passive,
                q_active,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        span,
    })
}

/// Subsidy at which state `s` is indifferent between serving and idling,
/// located by bisection on the sign of the DP advantage.
///
/// This route goes through dynamic programming only and serves as the
/// independent check of the closed-form index.
pub fn indifference_subsidy(params: &ServiceParams, s: usize, rel_tol: f64, opts: &DpOptions) -> Result<f64> {
    let mut hi = (cost(params, params.s_max()) + 1.0).max(1.0);
    while solve_subsidy_mdp(params, hi, opts)?.advantage(s) > 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::invalid("s", format!("state {s} never becomes passive")));
        }
    }
    let mut lo = 0.0;
    if solve_subsidy_mdp(params, lo, opts)?.advantage(s) <= 0.0 {
        return Ok(0.0);
    }
    while hi - lo > rel_tol * hi.max(1e-12) {
        let mid = 0.5 * (lo + hi);
        if solve_subsidy_mdp(params, mid, opts)?.advantage(s) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::threshold::expected_cost;
    use approx::assert_relative_eq;

    fn cfg(lambdas: &[f64], mu: f64, s_max: usize, k: usize) -> SystemConfig {
        SystemConfig::new(
            lambdas
                .iter()
                .map(|&l| ServiceParams::new(l, mu, s_max).unwrap())
                .collect(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn state_space_roundtrip() {
        let c = SystemConfig::new(
            vec![
                ServiceParams::new(1.0, 1.0, 3).unwrap(),
                ServiceParams::new(1.0, 1.0, 5).unwrap(),
            ],
            1,
        )
        .unwrap();
        let space = StateSpace::new(&c);
        assert_eq!(space.size(), 24);
        for x in 0..space.size() {
            assert_eq!(space.encode(space.decode(x).queues()), x);
        }
    }

    #[test]
    fn single_service_always_serves() {
        let c = cfg(&[5.0], 5.0, 30, 1);
        let sol = value_iteration(&c, &DpOptions::default()).unwrap();
        // serving everywhere is optimal: Poisson(1) queue, cost 1/5
        assert_relative_eq!(sol.average_cost(), expected_cost(c.service(0), 0).unwrap(), max_relative = 1e-8);
        for s in 1..=30 {
            assert!(sol.optimal_action(&SystemState::new(vec![s])).is_active(0));
        }
    }

    #[test]
    fn symmetric_instance_has_symmetric_actions() {
        let c = cfg(&[10.0, 10.0], 5.0, 12, 1);
        let sol = value_iteration(&c, &DpOptions::default()).unwrap();
        for a in 0..=12 {
            for b in 0..=12 {
                if a == b {
                    continue;
                }
                let x = sol.optimal_action(&SystemState::new(vec![a, b]));
                let y = sol.optimal_action(&SystemState::new(vec![b, a]));
                assert_eq!(x.is_active(0), y.is_active(1), "state ({a},{b})");
            }
        }
    }

    #[test]
    fn policy_evaluation_of_optimal_policy_matches_gain() {
        let c = cfg(&[10.0, 15.0], 5.0, 10, 1);
        let opts = DpOptions::default();
        let sol = value_iteration(&c, &opts).unwrap();
        let g = policy_evaluation(&c, &sol, &opts).unwrap();
        assert_relative_eq!(g, sol.average_cost(), max_relative = 1e-7);
    }

    #[test]
    fn budget_is_enforced() {
        let c = cfg(&[1.0, 1.0, 1.0], 1.0, 99, 1);
        let opts = DpOptions {
            max_states: 1000,
            ..DpOptions::default()
        };
        assert!(matches!(
            value_iteration(&c, &opts),
            Err(Error::BudgetExceeded { states: 1_000_000, budget: 1000 })
        ));
    }

    #[test]
    fn non_convergence_is_reported() {
        let c = cfg(&[10.0, 10.0], 5.0, 10, 1);
        let opts = DpOptions {
            max_iterations: 3,
            ..DpOptions::default()
        };
        assert!(matches!(value_iteration(&c, &opts), Err(Error::NoConvergence { iterations: 3, .. })));
    }

    #[test]
    fn subsidy_mdp_zero_subsidy_serves() {
        let p = ServiceParams::new(5.0, 5.0, 30).unwrap();
        let sol = solve_subsidy_mdp(&p, 0.0, &DpOptions::default()).unwrap();
        assert_relative_eq!(sol.gain, 0.2, max_relative = 1e-8);
        assert!((1..=30).all(|s| sol.is_active(s)));
    }
}
