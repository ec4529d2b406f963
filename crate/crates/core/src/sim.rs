//! Event-driven simulation of the controlled system.
//!
//! Transitions are drawn by competing exponentials. The system is observed
//! only at state changes, so "H steps" means H events.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rates, PlacementAction, SystemConfig, SystemState};
use crate::policy::PlacementPolicy;

/// Generator for run `stream` of a scenario seeded with `seed`.
///
/// Streams of the same seed are independent, so runs can execute in any
/// order or in parallel and still reproduce.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Arrival(usize),
    Departure(usize),
}

impl Event {
    pub fn service(&self) -> usize {
        match *self {
            Event::Arrival(i) | Event::Departure(i) => i,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Event::Arrival(_) => "arrival",
            Event::Departure(_) => "departure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub event: Event,
    /// Time spent in the pre-transition state.
    pub sojourn: f64,
}

/// Continuous time and number of events processed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub time: f64,
    pub events: u64,
}

impl SimClock {
    pub fn advance(&mut self, dt: f64) {
        self.time += dt;
        self.events += 1;
    }
}

/// Total event rate out of `state` under `action`.
pub fn total_rate(config: &SystemConfig, state: &SystemState, action: &PlacementAction) -> f64 {
    config
        .services()
        .iter()
        .enumerate()
        .map(|(i, p)| rates(p, state[i], action.is_active(i)).total())
        .sum()
}

/// Samples the next transition and applies it to `state` in place.
pub fn step<R: Rng + ?Sized>(
    config: &SystemConfig,
    state: &mut SystemState,
    action: &PlacementAction,
    rng: &mut R,
) -> Result<Transition> {
    let total = total_rate(config, state, action);
    if total <= 0.0 {
        return Err(Error::DeadState {
            state: state.queues().to_vec(),
        });
    }
    let e: f64 = rng.sample(Exp1);
    let sojourn = e / total;
    let mut u = rng.random::<f64>() * total;
    let mut chosen = None;
    let mut last = None;
    for (i, p) in config.services().iter().enumerate() {
        let r = rates(p, state[i], action.is_active(i));
        if r.birth > 0.0 {
            last = Some(Event::Arrival(i));
            if u < r.birth {
                chosen = Some(Event::Arrival(i));
                break;
            }
            u -= r.birth;
        }
        if r.death > 0.0 {
            last = Some(Event::Departure(i));
            if u < r.death {
                chosen = Some(Event::Departure(i));
                break;
            }
            u -= r.death;
        }
    }
    // Rounding can leave u marginally above the last rate.
    let event = chosen.or(last).expect("positive total rate");
    match event {
        Event::Arrival(i) => state.queues_mut()[i] += 1,
        Event::Departure(i) => state.queues_mut()[i] -= 1,
    }
    Ok(Transition { event, sojourn })
}

/// One event as seen by trace sinks and learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub index: u64,
    /// Time at which the event fires.
    pub time: f64,
    pub pre_state: SystemState,
    pub action: PlacementAction,
    pub event: Event,
    pub sojourn: f64,
    /// Instantaneous cost rate in the pre-state.
    pub cost: f64,
    pub post_state: SystemState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Record per-customer sojourn times (for Little's-law checks).
    pub track_latency: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub events: u64,
    pub time: f64,
    /// `(integral of sum_i C_i(S_i(t)) dt) / T`.
    pub average_cost: f64,
    pub mean_queues: Vec<f64>,
    /// Accepted arrivals per unit time.
    pub arrival_rates: Vec<f64>,
    /// Departures per unit time.
    pub throughput: Vec<f64>,
    /// `occupancy[i][s]`: fraction of time service `i` held `s` requests.
    pub occupancy: Vec<Vec<f64>>,
    pub latency: Option<Vec<LatencyStats>>,
}

struct LatencyTracker {
    present: Vec<Vec<f64>>,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: Vec<u64>,
    rng: ChaCha8Rng,
}

impl LatencyTracker {
    fn new(n: usize, seed: u64) -> Self {
        LatencyTracker {
            present: vec![Vec::new(); n],
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            count: vec![0; n],
            rng: stream_rng(seed, u64::MAX),
        }
    }

    fn record(&mut self, event: Event, now: f64) {
        match event {
            Event::Arrival(i) => self.present[i].push(now),
            Event::Departure(i) => {
                // Every waiting customer is served at the same rate, so the
                // departing one is uniform among those present.
                let list = &mut self.present[i];
                let k = self.rng.random_range(0..list.len());
                let w = now - list.swap_remove(k);
                self.sum[i] += w;
                self.sum_sq[i] += w * w;
                self.count[i] += 1;
            }
        }
    }

    fn finish(self) -> Vec<LatencyStats> {
        (0..self.count.len())
            .map(|i| {
                let n = self.count[i].max(1) as f64;
                let mean = self.sum[i] / n;
                LatencyStats {
                    count: self.count[i],
                    mean,
                    variance: (self.sum_sq[i] / n - mean * mean).max(0.0),
                }
            })
            .collect()
    }
}

/// Runs `policy` from the empty state for `total_events` events.
pub fn run_policy<P, R>(
    config: &SystemConfig,
    policy: &P,
    total_events: u64,
    rng: &mut R,
    opts: RunOptions,
) -> Result<RunSummary>
where
    P: PlacementPolicy + ?Sized,
    R: Rng + ?Sized,
{
    run_inner(config, policy, total_events, rng, opts, None)
}

/// As [`run_policy`], handing every event to `sink`.
pub fn run_policy_traced<P, R, F>(
    config: &SystemConfig,
    policy: &P,
    total_events: u64,
    rng: &mut R,
    opts: RunOptions,
    mut sink: F,
) -> Result<RunSummary>
where
    P: PlacementPolicy + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(&TraceRecord),
{
    run_inner(config, policy, total_events, rng, opts, Some(&mut sink))
}

fn run_inner<P, R>(
    config: &SystemConfig,
    policy: &P,
    total_events: u64,
    rng: &mut R,
    opts: RunOptions,
    mut sink: Option<&mut dyn FnMut(&TraceRecord)>,
) -> Result<RunSummary>
where
    P: PlacementPolicy + ?Sized,
    R: Rng + ?Sized,
{
    if total_events == 0 {
        return Err(Error::invalid("total_events", "must be at least 1"));
    }
    let n = config.len();
    let mut state = config.zero_state();
    let mut action = PlacementAction::none(n);
    let mut clock = SimClock::default();
    let mut cost_integral = 0.0;
    let mut queue_integral = vec![0.0; n];
    let mut occupancy: Vec<Vec<f64>> = config.services().iter().map(|p| vec![0.0; p.s_max() + 1]).collect();
    let mut arrivals = vec![0u64; n];
    let mut departures = vec![0u64; n];
    let mut tracker = opts.track_latency.then(|| LatencyTracker::new(n, rng.random()));

    for index in 0..total_events {
        action.clear();
        policy.decide(&state, &mut action);
        config.check_action(&action)?;
        let pre = sink.is_some().then(|| state.clone());
        let c = config.total_cost(&state);
        let tr = step(config, &mut state, &action, rng)?;
        cost_integral += c * tr.sojourn;
        for i in 0..n {
            let before = match tr.event {
                Event::Arrival(j) if j == i => state[i] - 1,
                Event::Departure(j) if j == i => state[i] + 1,
                _ => state[i],
            };
            queue_integral[i] += before as f64 * tr.sojourn;
            occupancy[i][before] += tr.sojourn;
        }
        clock.advance(tr.sojourn);
        match tr.event {
            Event::Arrival(i) => arrivals[i] += 1,
            Event::Departure(i) => departures[i] += 1,
        }
        if let Some(t) = tracker.as_mut() {
            t.record(tr.event, clock.time);
        }
        if let (Some(f), Some(pre)) = (sink.as_mut(), pre) {
            f(&TraceRecord {
                index,
                time: clock.time,
                pre_state: pre,
                action: action.clone(),
                event: tr.event,
                sojourn: tr.sojourn,
                cost: c,
                post_state: state.clone(),
            });
        }
    }
    let t = clock.time;
    occupancy.iter_mut().flatten().for_each(|x| *x /= t);
    Ok(RunSummary {
        events: clock.events,
        time: t,
        average_cost: cost_integral / t,
        mean_queues: queue_integral.iter().map(|q| q / t).collect(),
        arrival_rates: arrivals.iter().map(|&a| a as f64 / t).collect(),
        throughput: departures.iter().map(|&d| d as f64 / t).collect(),
        occupancy,
        latency: tracker.map(LatencyTracker::finish),
    })
}

/// A learner that fixes a policy per episode and watches every event.
pub trait EpisodicLearner {
    type Policy: PlacementPolicy;

    /// Called at the start of episode `episode` (0-based), after the reset.
    fn begin_episode(&mut self, episode: usize) -> Self::Policy;

    fn observe(&mut self, record: &TraceRecord);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicReport {
    /// `sum cost * sojourn` over each episode's H events.
    pub episode_costs: Vec<f64>,
    /// Episode cost minus the benchmark.
    pub regret: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
}

/// Runs `episodes` episodes of `horizon` events each, resetting to the empty
/// state before every episode.
pub fn run_episodic<L, R>(
    config: &SystemConfig,
    learner: &mut L,
    episodes: usize,
    horizon: usize,
    benchmark: f64,
    rng: &mut R,
) -> Result<EpisodicReport>
where
    L: EpisodicLearner,
    R: Rng + ?Sized,
{
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let n = config.len();
    let mut state = config.zero_state();
    let mut action = PlacementAction::none(n);
    let mut report = EpisodicReport {
        episode_costs: Vec::with_capacity(episodes),
        regret: Vec::with_capacity(episodes),
        cumulative_regret: Vec::with_capacity(episodes),
    };
    let mut index = 0u64;
    let mut time = 0.0;
    let mut cum = 0.0;
    for k in 0..episodes {
        state.reset();
        let policy = learner.begin_episode(k);
        let mut episode_cost = 0.0;
        for _ in 0..horizon {
            action.clear();
            policy.decide(&state, &mut action);
            if action.active_count() > config.capacity() {
                return Err(Error::Protocol {
                    episode: k,
                    active: action.active_count(),
                    capacity: config.capacity(),
                });
            }
            let pre = state.clone();
            let c = config.total_cost(&pre);
            let tr = step(config, &mut state, &action, rng)?;
            episode_cost += c * tr.sojourn;
            time += tr.sojourn;
            learner.observe(&TraceRecord {
                index,
                time,
                pre_state: pre,
                action: action.clone(),
                event: tr.event,
                sojourn: tr.sojourn,
                cost: c,
                post_state: state.clone(),
            });
            index += 1;
        }
        cum += episode_cost - benchmark;
        report.episode_costs.push(episode_cost);
        report.regret.push(episode_cost - benchmark);
        report.cumulative_regret.push(cum);
    }
    Ok(report)
}

/// Expected H-event episode cost of a policy, by Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub episodes: usize,
}

/// Default number of episodes behind a benchmark estimate.
pub const BENCHMARK_EPISODES: usize = 200;

/// Estimates the expected cost of one `horizon`-event episode started from the
/// empty state. Episode `j` uses stream `j` of `seed`.
pub fn estimate_episode_cost<P>(
    config: &SystemConfig,
    policy: &P,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<BenchmarkEstimate>
where
    P: PlacementPolicy + Sync + ?Sized,
{
    if episodes == 0 || horizon == 0 {
        return Err(Error::invalid("episodes", "episodes and horizon must be positive"));
    }
    let costs: Vec<f64> = (0..episodes)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(seed, j as u64);
            let mut state = config.zero_state();
            let mut action = PlacementAction::none(config.len());
            let mut total = 0.0;
            for _ in 0..horizon {
                action.clear();
                policy.decide(&state, &mut action);
                let c = config.total_cost(&state);
                let tr = step(config, &mut state, &action, &mut rng)?;
                total += c * tr.sojourn;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    let m = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / m;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    Ok(BenchmarkEstimate {
        mean,
        std_err: (var / m).sqrt(),
        episodes,
    })
}

/// Picks uniformly among nonempty services, up to capacity. A baseline for
/// regret comparisons.
#[derive(Debug, Clone)]
pub struct RandomPlacement {
    capacity: usize,
    seed: std::cell::Cell<u64>,
}

impl RandomPlacement {
    pub fn new(capacity: usize, seed: u64) -> Self {
        RandomPlacement {
            capacity,
            seed: std::cell::Cell::new(seed),
        }
    }
}

impl PlacementPolicy for RandomPlacement {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        let s = self.seed.get();
        self.seed.set(s.wrapping_add(1));
        let mut rng = stream_rng(s, 0);
        let nonempty: Vec<usize> = (0..state.len()).filter(|&i| state[i] > 0).collect();
        for &i in nonempty.choose_multiple(&mut rng, self.capacity) {
            out.set(i, true);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::threshold::{expected_cost, stationary_dist};
    use crate::model::ServiceParams;
    use crate::policy::ThresholdPlacement;
    use crate::whittle::WhittlePolicy;

    fn single(lambda: f64, mu: f64, s_max: usize) -> SystemConfig {
        SystemConfig::new(vec![ServiceParams::new(lambda, mu, s_max).unwrap()], 1).unwrap()
    }

    #[test]
    fn empty_state_only_arrives() {
        let c = SystemConfig::new(
            vec![
                ServiceParams::new(3.0, 5.0, 10).unwrap(),
                ServiceParams::new(4.0, 5.0, 10).unwrap(),
            ],
            1,
        )
        .unwrap();
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let mut s = c.zero_state();
            let a = PlacementAction::from_active(2, &[0]);
            let tr = step(&c, &mut s, &a, &mut rng).unwrap();
            assert!(matches!(tr.event, Event::Arrival(_)));
        }
    }

    #[test]
    fn event_frequencies_match_rates() {
        let c = SystemConfig::new(
            vec![
                ServiceParams::new(3.0, 5.0, 10).unwrap(),
                ServiceParams::new(4.0, 2.0, 10).unwrap(),
            ],
            1,
        )
        .unwrap();
        let a = PlacementAction::from_active(2, &[1]);
        let base = SystemState::new(vec![2, 3]);
        // rates: arrival0 3, arrival1 4, departure1 6
        let probs = [3.0 / 13.0, 4.0 / 13.0, 6.0 / 13.0];
        let mut counts = [0u32; 3];
        let mut rng = stream_rng(7, 0);
        let n = 100_000;
        for _ in 0..n {
            let mut s = base.clone();
            match step(&c, &mut s, &a, &mut rng).unwrap().event {
                Event::Arrival(0) => counts[0] += 1,
                Event::Arrival(1) => counts[1] += 1,
                Event::Departure(1) => counts[2] += 1,
                e => panic!("impossible event {e:?}"),
            }
        }
        for (k, &p) in probs.iter().enumerate() {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[k] as f64 - n as f64 * p).abs() < 3.0 * sd, "event {k}");
        }
    }

    #[test]
    fn dead_state_is_reported() {
        // Full queue, passive: no arrivals and no departures.
        let c = single(1.0, 1.0, 2);
        let mut s = SystemState::new(vec![2]);
        let err = step(&c, &mut s, &PlacementAction::none(1), &mut stream_rng(0, 0)).unwrap_err();
        assert_eq!(err, Error::DeadState { state: vec![2] });
    }

    #[test]
    fn threshold_run_matches_closed_form() {
        let c = single(10.0, 5.0, 30);
        let pol = ThresholdPlacement::new(vec![2]);
        let sum = run_policy(&c, &pol, 400_000, &mut stream_rng(3, 0), RunOptions::default()).unwrap();
        let want = expected_cost(c.service(0), 2).unwrap();
        assert!((sum.average_cost - want).abs() < 0.02 * want, "{} vs {want}", sum.average_cost);
        let q = stationary_dist(c.service(0), 2).unwrap();
        let tv: f64 = 0.5 * q.probs().iter().zip(&sum.occupancy[0]).map(|(a, b)| (a - b).abs()).sum::<f64>();
        assert!(tv < 0.02);
    }

    #[test]
    fn same_seed_same_summary() {
        let c = SystemConfig::new(
            vec![
                ServiceParams::new(10.0, 5.0, 15).unwrap(),
                ServiceParams::new(20.0, 5.0, 15).unwrap(),
            ],
            1,
        )
        .unwrap();
        let pol = WhittlePolicy::for_config(&c).unwrap();
        let opts = RunOptions { track_latency: true };
        let a = run_policy(&c, &pol, 20_000, &mut stream_rng(11, 2), opts).unwrap();
        let b = run_policy(&c, &pol, 20_000, &mut stream_rng(11, 2), opts).unwrap();
        assert_eq!(a, b);
        let other = run_policy(&c, &pol, 20_000, &mut stream_rng(11, 3), opts).unwrap();
        assert_ne!(a.average_cost, other.average_cost);
    }

    struct Fixed(WhittlePolicy);

    impl EpisodicLearner for Fixed {
        type Policy = WhittlePolicy;
        fn begin_episode(&mut self, _: usize) -> WhittlePolicy {
            self.0.clone()
        }
        fn observe(&mut self, _: &TraceRecord) {}
    }

    struct Greedy;

    impl EpisodicLearner for Greedy {
        type Policy = crate::policy::FnPolicy<fn(&SystemState) -> Vec<usize>>;
        fn begin_episode(&mut self, _: usize) -> Self::Policy {
            crate::policy::FnPolicy(|s: &SystemState| (0..s.len()).collect())
        }
        fn observe(&mut self, _: &TraceRecord) {}
    }

    #[test]
    fn episodic_run_resets_and_checks_capacity() {
        let c = SystemConfig::new(
            vec![
                ServiceParams::new(10.0, 5.0, 10).unwrap(),
                ServiceParams::new(15.0, 5.0, 10).unwrap(),
            ],
            1,
        )
        .unwrap();
        let pol = WhittlePolicy::for_config(&c).unwrap();
        let bench = estimate_episode_cost(&c, &pol, 50, 400, 5).unwrap();
        let rep = run_episodic(&c, &mut Fixed(pol), 400, 50, bench.mean, &mut stream_rng(9, 0)).unwrap();
        let mean_regret = rep.regret.iter().sum::<f64>() / 400.0;
        // difference of two independent means
        assert!(mean_regret.abs() < 3.0 * bench.std_err * 2f64.sqrt());
        let err = run_episodic(&c, &mut Greedy, 3, 10, 0.0, &mut stream_rng(9, 0)).unwrap_err();
        assert_eq!(err, Error::Protocol { episode: 0, active: 2, capacity: 1 });
    }
}
