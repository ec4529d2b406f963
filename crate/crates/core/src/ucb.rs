//! UCB-Whittle: optimistic parameter selection over a finite candidate set.
//!
//! Parameters are expressed as mean times: `m_lambda = 1 / lambda` between
//! arrivals and `m_mu = 1 / mu` per delivery. At each episode start the
//! learner keeps the candidates consistent with every confidence interval,
//! picks the one whose relaxed optimal cost is smallest and runs its Whittle
//! index rule for the whole episode.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::relaxed::RelaxedProblem;
use crate::exact::threshold::ThresholdProfile;
use crate::model::{ServiceParams, SystemConfig};
use crate::sim::{estimate_episode_cost, run_episodic, stream_rng, EpisodicLearner, EpisodicReport, Event, TraceRecord};
use crate::whittle::{whittle_table, WhittlePolicy, WhittleTable};

/// Mean inter-arrival and mean delivery time of one service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceMeans {
    pub arrival: f64,
    pub delivery: f64,
}

impl ServiceMeans {
    pub fn from_rates(lambda: f64, mu: f64) -> Self {
        ServiceMeans {
            arrival: 1.0 / lambda,
            delivery: 1.0 / mu,
        }
    }

    pub fn of(params: &ServiceParams) -> Self {
        ServiceMeans::from_rates(params.lambda(), params.mu())
    }

    pub fn to_params(&self, s_max: usize) -> Result<ServiceParams> {
        ServiceParams::new(1.0 / self.arrival, 1.0 / self.delivery, s_max)
    }
}

/// Finite parameter set `Theta` with typed structure.
///
/// Services are grouped into types; every service of a type shares one
/// parameter. A candidate picks one option per type, so `Theta` is the
/// Cartesian product of the per-type option lists. Candidate ids are
/// mixed-radix with type 0 most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    type_of: Vec<usize>,
    options: Vec<Vec<ServiceMeans>>,
}

impl CandidateSet {
    pub fn new(type_of: Vec<usize>, options: Vec<Vec<ServiceMeans>>) -> Result<Self> {
        if options.is_empty() || options.iter().any(Vec::is_empty) {
            return Err(Error::invalid("candidates", "every type needs at least one option"));
        }
        if let Some(&t) = type_of.iter().find(|&&t| t >= options.len()) {
            return Err(Error::invalid("candidates", format!("service type {t} has no options")));
        }
        for o in options.iter().flatten() {
            if !(o.arrival > 0.0 && o.delivery > 0.0 && o.arrival.is_finite() && o.delivery.is_finite()) {
                return Err(Error::invalid("candidates", "mean times must be positive"));
            }
        }
        Ok(CandidateSet { type_of, options })
    }

    /// Grid of `lambda x mu` multipliers around each type's true rates.
    pub fn grid_around(
        truth: &SystemConfig,
        type_of: Vec<usize>,
        lambda_factors: &[f64],
        mu_factors: &[f64],
    ) -> Result<Self> {
        let types = type_of.iter().max().map_or(0, |t| t + 1);
        let mut options = Vec::with_capacity(types);
        for t in 0..types {
            let i = type_of
                .iter()
                .position(|&x| x == t)
                .ok_or_else(|| Error::invalid("candidates", format!("type {t} has no service")))?;
            let p = truth.service(i);
            let mut opts = Vec::new();
            for &fl in lambda_factors {
                for &fm in mu_factors {
                    opts.push(ServiceMeans::from_rates(p.lambda() * fl, p.mu() * fm));
                }
            }
            options.push(opts);
        }
        CandidateSet::new(type_of, options)
    }

    pub fn services(&self) -> usize {
        self.type_of.len()
    }

    pub fn types(&self) -> usize {
        self.options.len()
    }

    pub fn type_of(&self, service: usize) -> usize {
        self.type_of[service]
    }

    pub fn options(&self, t: usize) -> &[ServiceMeans] {
        &self.options[t]
    }

    pub fn len(&self) -> usize {
        self.options.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Option index chosen for each type by candidate `id`.
    pub fn choices(&self, mut id: usize) -> Vec<usize> {
        let mut out = vec![0; self.types()];
        for t in (0..self.types()).rev() {
            let k = self.options[t].len();
            out[t] = id % k;
            id /= k;
        }
        out
    }

    pub fn id_of(&self, choices: &[usize]) -> usize {
        choices
            .iter()
            .zip(&self.options)
            .fold(0, |acc, (&c, opts)| acc * opts.len() + c)
    }

    pub fn means(&self, id: usize, service: usize) -> ServiceMeans {
        let t = self.type_of[service];
        self.options[t][self.choices(id)[t]]
    }

    /// The system a candidate describes, with the truncation of `base`.
    pub fn config(&self, id: usize, base: &SystemConfig) -> Result<SystemConfig> {
        let choices = self.choices(id);
        let services = (0..self.services())
            .map(|i| {
                let t = self.type_of[i];
                self.options[t][choices[t]].to_params(base.service(i).s_max())
            })
            .collect::<Result<Vec<_>>>()?;
        SystemConfig::new(services, base.capacity())
    }

    /// Id of the candidate matching `truth` within relative `tol`, if any.
    pub fn locate(&self, truth: &SystemConfig, tol: f64) -> Option<usize> {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * b.abs();
        let mut choices = vec![None; self.types()];
        for (i, p) in truth.services().iter().enumerate() {
            let t = self.type_of[i];
            let m = ServiceMeans::of(p);
            let k = self.options[t]
                .iter()
                .position(|o| close(o.arrival, m.arrival) && close(o.delivery, m.delivery))?;
            match choices[t] {
                Some(prev) if prev != k => return None,
                _ => choices[t] = Some(k),
            }
        }
        let choices: Option<Vec<usize>> = choices.into_iter().collect();
        choices.map(|c| self.id_of(&c))
    }

    /// Smallest rate appearing anywhere in the set.
    pub fn min_rate(&self) -> f64 {
        self.options
            .iter()
            .flatten()
            .map(|o| (1.0 / o.arrival).min(1.0 / o.delivery))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Running sums behind the empirical mean times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    s_max: Vec<usize>,
    seen_arrival: Vec<bool>,
    /// Time during which service `i` could receive arrivals, counted from its
    /// first arrival.
    arrival_exposure: Vec<f64>,
    arrival_count: Vec<u64>,
    /// Integral of `S_i(t) * A_i(t)`: total customer-time in service.
    delivery_time: Vec<f64>,
    delivery_count: Vec<u64>,
}

impl EstimatorState {
    pub fn new(config: &SystemConfig) -> Self {
        let n = config.len();
        EstimatorState {
            s_max: config.services().iter().map(ServiceParams::s_max).collect(),
            seen_arrival: vec![false; n],
            arrival_exposure: vec![0.0; n],
            arrival_count: vec![0; n],
            delivery_time: vec![0.0; n],
            delivery_count: vec![0; n],
        }
    }

    /// Accounts for `sojourn` time spent in `pre` under `active`, ended by
    /// `event`.
    pub fn update(&mut self, pre: &[usize], active: &[bool], event: Event, sojourn: f64) {
        for i in 0..pre.len() {
            if self.seen_arrival[i] && pre[i] < self.s_max[i] {
                self.arrival_exposure[i] += sojourn;
            }
            if active[i] {
                self.delivery_time[i] += pre[i] as f64 * sojourn;
            }
        }
        match event {
            Event::Arrival(i) => {
                if self.seen_arrival[i] {
                    self.arrival_count[i] += 1;
                } else {
                    self.seen_arrival[i] = true;
                }
            }
            Event::Departure(i) => self.delivery_count[i] += 1,
        }
    }

    pub fn observe(&mut self, rec: &TraceRecord) {
        self.update(rec.pre_state.queues(), rec.action.as_slice(), rec.event, rec.sojourn);
    }

    pub fn arrival_count(&self, i: usize) -> u64 {
        self.arrival_count[i]
    }

    pub fn delivery_count(&self, i: usize) -> u64 {
        self.delivery_count[i]
    }

    /// Empirical mean inter-arrival time; `None` before two arrivals.
    pub fn arrival_mean(&self, i: usize) -> Option<f64> {
        (self.arrival_count[i] > 0).then(|| self.arrival_exposure[i] / self.arrival_count[i] as f64)
    }

    /// Empirical mean delivery time; `None` before the first delivery.
    pub fn delivery_mean(&self, i: usize) -> Option<f64> {
        (self.delivery_count[i] > 0).then(|| self.delivery_time[i] / self.delivery_count[i] as f64)
    }
}

/// Confidence-radius constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbConfig {
    pub delta: f64,
    pub b: f64,
    pub epsilon: f64,
    pub tau_h: f64,
    pub k1: f64,
    /// Total number of events `T`.
    pub horizon: u64,
}

impl UcbConfig {
    /// `b = 2`, `delta = epsilon = 1/T`, `tau_h = -ln(epsilon) / lambda_lb`,
    /// `K1 = 2 tau_h^2`.
    pub fn theorem_defaults(horizon: u64, min_rate: f64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::invalid("horizon", "must be at least 2"));
        }
        let t = horizon as f64;
        let epsilon = 1.0 / t;
        let tau_h = -epsilon.ln() / min_rate;
        UcbConfig {
            delta: 1.0 / t,
            b: 2.0,
            epsilon,
            tau_h,
            k1: 2.0 * tau_h * tau_h,
            horizon,
        }
        .validated()
    }

    pub fn with_k1(mut self, k1: f64) -> Result<Self> {
        self.k1 = k1;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", "must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon", "must lie in (0, 1)"));
        }
        if self.b <= 1.0 {
            return Err(Error::invalid("b", "must exceed 1"));
        }
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::invalid("k1", "must be positive"));
        }
        Ok(self)
    }

    /// `sqrt(K1 / count * ln(N T^b / delta))`; infinite for zero samples.
    pub fn radius(&self, count: u64, services: usize) -> f64 {
        if count == 0 {
            return f64::INFINITY;
        }
        let log_term = (services as f64).ln() + self.b * (self.horizon as f64).ln() - self.delta.ln();
        (self.k1 / count as f64 * log_term).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub center: f64,
    pub radius: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.radius.is_infinite() || (x - self.center).abs() <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBall {
    pub arrival: Vec<Interval>,
    pub delivery: Vec<Interval>,
    /// Per type, the options lying inside every interval of that type's
    /// services. The ball is their Cartesian product.
    pub admitted: Vec<Vec<usize>>,
}

impl ConfidenceBall {
    pub fn is_empty(&self) -> bool {
        self.admitted.iter().any(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.admitted.iter().map(Vec::len).product()
    }

    /// Ids of all admitted candidates, in list order.
    pub fn members(&self, candidates: &CandidateSet) -> Vec<usize> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut ids = vec![0usize];
        for (t, adm) in self.admitted.iter().enumerate() {
            let k = candidates.options(t).len();
            ids = ids.iter().flat_map(|&base| adm.iter().map(move |&c| base * k + c)).collect();
        }
        ids
    }

    pub fn contains(&self, candidates: &CandidateSet, id: usize) -> bool {
        candidates
            .choices(id)
            .iter()
            .zip(&self.admitted)
            .all(|(c, adm)| adm.contains(c))
    }
}

/// Builds the confidence ball from the current estimates.
pub fn confidence_ball(est: &EstimatorState, cfg: &UcbConfig, candidates: &CandidateSet) -> ConfidenceBall {
    let n = candidates.services();
    let interval = |mean: Option<f64>, count: u64| Interval {
        center: mean.unwrap_or(0.0),
        radius: cfg.radius(count, n),
    };
    let arrival: Vec<Interval> = (0..n)
        .map(|i| interval(est.arrival_mean(i), est.arrival_count(i)))
        .collect();
    let delivery: Vec<Interval> = (0..n)
        .map(|i| interval(est.delivery_mean(i), est.delivery_count(i)))
        .collect();
    let admitted = (0..candidates.types())
        .map(|t| {
            (0..candidates.options(t).len())
                .filter(|&k| {
                    let o = candidates.options(t)[k];
                    (0..n)
                        .filter(|&i| candidates.type_of(i) == t)
                        .all(|i| arrival[i].contains(o.arrival) && delivery[i].contains(o.delivery))
                })
                .collect()
        })
        .collect();
    ConfidenceBall {
        arrival,
        delivery,
        admitted,
    }
}

/// Relaxed optimal cost of every candidate, computed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedCosts {
    values: Vec<f64>,
}

impl RelaxedCosts {
    pub fn compute(candidates: &CandidateSet, base: &SystemConfig) -> Result<Self> {
        // Profiles depend only on (type, option); services of one type share
        // truncation in every experiment, so group by type.
        let mut profiles = Vec::with_capacity(candidates.types());
        let mut counts = vec![0usize; candidates.types()];
        let mut s_max = vec![None; candidates.types()];
        for i in 0..candidates.services() {
            let t = candidates.type_of(i);
            counts[t] += 1;
            let s = base.service(i).s_max();
            match s_max[t] {
                Some(prev) if prev != s => {
                    return Err(Error::invalid("candidates", "services of one type must share s_max"));
                }
                _ => s_max[t] = Some(s),
            }
        }
        for t in 0..candidates.types() {
            let s = s_max[t].ok_or_else(|| Error::invalid("candidates", format!("type {t} has no service")))?;
            let per: Vec<ThresholdProfile> = candidates
                .options(t)
                .iter()
                .map(|o| o.to_params(s).map(|p| ThresholdProfile::new(&p)))
                .collect::<Result<_>>()?;
            profiles.push(per);
        }
        let capacity = base.capacity();
        let values = (0..candidates.len())
            .into_par_iter()
            .map(|id| {
                let choices = candidates.choices(id);
                let groups = choices
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| counts[*t] > 0)
                    .map(|(t, &c)| (profiles[t][c].clone(), counts[t]))
                    .collect();
                RelaxedProblem::from_profiles(groups, capacity).solve().value
            })
            .collect();
        Ok(RelaxedCosts { values })
    }

    pub fn value(&self, id: usize) -> f64 {
        self.values[id]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cheapest admitted candidate; ties go to the earlier id. An empty ball
/// falls back to a uniform draw from the whole set.
pub fn optimistic_param<R: Rng + ?Sized>(
    ball: &ConfidenceBall,
    candidates: &CandidateSet,
    costs: &RelaxedCosts,
    rng: &mut R,
) -> usize {
    if ball.is_empty() {
        return rng.random_range(0..candidates.len());
    }
    let mut best = (f64::INFINITY, usize::MAX);
    for id in ball.members(candidates) {
        let v = costs.value(id);
        if v < best.0 || (v == best.0 && id < best.1) {
            best = (v, id);
        }
    }
    best.1
}

/// Gap between the true candidate's relaxed cost and the most expensive
/// candidate with a different cost. `None` when every candidate costs the
/// same.
pub fn gap(costs: &RelaxedCosts, truth: usize) -> Option<f64> {
    let c0 = costs.value(truth);
    costs
        .values()
        .iter()
        .filter(|&&v| v != c0)
        .fold(None, |acc: Option<f64>, &v| Some(acc.map_or(v, |a| a.max(v))))
        .map(|m| c0 - m)
}

struct UcbLearner<'a> {
    base: &'a SystemConfig,
    candidates: &'a CandidateSet,
    cfg: UcbConfig,
    costs: &'a RelaxedCosts,
    est: EstimatorState,
    rng: rand_chacha::ChaCha8Rng,
    selected: Vec<usize>,
    ball_sizes: Vec<usize>,
    cache: std::collections::HashMap<usize, Vec<WhittleTable>>,
    error: Option<Error>,
}

impl UcbLearner<'_> {
    fn tables_for(&mut self, id: usize) -> Result<Vec<WhittleTable>> {
        if let Some(t) = self.cache.get(&id) {
            return Ok(t.clone());
        }
        let cfg = self.candidates.config(id, self.base)?;
        let tables: Vec<WhittleTable> = cfg.services().iter().map(whittle_table).collect::<Result<_>>()?;
        self.cache.insert(id, tables.clone());
        Ok(tables)
    }
}

impl EpisodicLearner for UcbLearner<'_> {
    type Policy = WhittlePolicy;

    fn begin_episode(&mut self, _episode: usize) -> WhittlePolicy {
        let ball = confidence_ball(&self.est, &self.cfg, self.candidates);
        let id = optimistic_param(&ball, self.candidates, self.costs, &mut self.rng);
        self.selected.push(id);
        self.ball_sizes.push(ball.len());
        let tables = match self.tables_for(id) {
            Ok(t) => t,
            Err(e) => {
                self.error.get_or_insert(e);
                // Idle policy keeps the run well-formed; the error is raised after.
                vec![WhittleTable::learned(vec![0.0]); self.base.len()]
            }
        };
        WhittlePolicy::new(tables, self.base.capacity())
    }

    fn observe(&mut self, rec: &TraceRecord) {
        self.est.observe(rec);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbReport {
    /// Candidate chosen in each episode.
    pub selected: Vec<usize>,
    /// Size of the confidence ball at each episode start.
    pub ball_sizes: Vec<usize>,
    pub truth: Option<usize>,
    pub benchmark: f64,
    pub episodes: EpisodicReport,
    /// Index tables of every candidate that was selected at least once.
    pub tables: Vec<(usize, Vec<WhittleTable>)>,
    pub final_estimates: EstimatorState,
}

impl UcbReport {
    /// Fraction of episodes from `from` on that selected the true candidate.
    pub fn truth_frequency(&self, from: usize) -> f64 {
        let Some(t) = self.truth else { return 0.0 };
        let tail = &self.selected[from.min(self.selected.len())..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().filter(|&&s| s == t).count() as f64 / tail.len() as f64
    }

    pub fn tables_of(&self, id: usize) -> Option<&[WhittleTable]> {
        self.tables.iter().find(|(k, _)| *k == id).map(|(_, t)| t.as_slice())
    }
}

/// Settings of one UCB-Whittle run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UcbRun {
    pub episodes: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Episodes behind the benchmark estimate.
    pub benchmark_episodes: usize,
}

/// Runs UCB-Whittle on the system `truth`.
///
/// Stream 0 of `seed` drives the system, stream 1 the learner's tie-free
/// random choices, and stream 2 onward the benchmark estimate.
pub fn run_ucb_whittle(
    truth: &SystemConfig,
    candidates: &CandidateSet,
    cfg: &UcbConfig,
    costs: &RelaxedCosts,
    run: &UcbRun,
    benchmark: Option<f64>,
) -> Result<UcbReport> {
    if candidates.services() != truth.len() {
        return Err(Error::invalid("candidates", "candidate set and system disagree on N"));
    }
    let benchmark = match benchmark {
        Some(b) => b,
        None => {
            let pol = WhittlePolicy::for_config(truth)?;
            estimate_episode_cost(truth, &pol, run.horizon, run.benchmark_episodes, run.seed ^ 0xB3_4C_11)?.mean
        }
    };
    let mut learner = UcbLearner {
        base: truth,
        candidates,
        cfg: *cfg,
        costs,
        est: EstimatorState::new(truth),
        rng: stream_rng(run.seed, 1),
        selected: Vec::with_capacity(run.episodes),
        ball_sizes: Vec::with_capacity(run.episodes),
        cache: Default::default(),
        error: None,
    };
    let mut rng = stream_rng(run.seed, 0);
    let episodes = run_episodic(truth, &mut learner, run.episodes, run.horizon, benchmark, &mut rng)?;
    if let Some(e) = learner.error {
        return Err(e);
    }
    let mut tables: Vec<(usize, Vec<WhittleTable>)> = learner.cache.into_iter().collect();
    tables.sort_by_key(|(k, _)| *k);
    Ok(UcbReport {
        selected: learner.selected,
        ball_sizes: learner.ball_sizes,
        truth: candidates.locate(truth, 1e-9),
        benchmark,
        episodes,
        tables,
        final_estimates: learner.est,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_service() -> SystemConfig {
        SystemConfig::new(
            vec![
                ServiceParams::new(10.0, 5.0, 5).unwrap(),
                ServiceParams::new(10.0, 5.0, 5).unwrap(),
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn estimator_starts_undefined() {
        let est = EstimatorState::new(&two_service());
        assert_eq!(est.arrival_mean(0), None);
        assert_eq!(est.delivery_mean(1), None);
        assert_eq!(est.arrival_count(0), 0);
    }

    #[test]
    fn arrival_gaps_average() {
        let mut est = EstimatorState::new(&two_service());
        let idle = [false, false];
        // arrivals of service 0 at t = 1.0, 2.5, 4.0
        est.update(&[0, 0], &idle, Event::Arrival(0), 1.0);
        est.update(&[1, 0], &idle, Event::Arrival(0), 1.5);
        est.update(&[2, 0], &idle, Event::Arrival(0), 1.5);
        assert_relative_eq!(est.arrival_mean(0).unwrap(), 1.5);
        assert_eq!(est.arrival_count(0), 2);
    }

    #[test]
    fn delivery_time_is_customer_time_in_service() {
        let mut est = EstimatorState::new(&two_service());
        est.update(&[3, 0], &[true, false], Event::Departure(0), 0.1);
        assert_relative_eq!(est.delivery_mean(0).unwrap(), 0.3);
    }

    #[test]
    fn radius_algebra() {
        let cfg = UcbConfig::theorem_defaults(10_000, 2.0).unwrap();
        let log_term = (2.0f64).ln() + 2.0 * 10_000f64.ln() + 10_000f64.ln();
        let n = (4.0 * cfg.k1 * log_term).round() as u64;
        let r = cfg.radius(n, 2);
        assert_relative_eq!(r, 0.5, max_relative = 1e-3);
        assert!(cfg.radius(0, 2).is_infinite());
        assert!(cfg.radius(n + 1, 2) < r);
    }

    #[test]
    fn empty_counts_admit_everything() {
        let truth = two_service();
        let cands = CandidateSet::grid_around(&truth, vec![0, 0], &[0.5, 1.0, 2.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(cands.len(), 9);
        let cfg = UcbConfig::theorem_defaults(1000, cands.min_rate()).unwrap();
        let ball = confidence_ball(&EstimatorState::new(&truth), &cfg, &cands);
        assert_eq!(ball.members(&cands), (0..9).collect::<Vec<_>>());
        assert_eq!(cands.locate(&truth, 1e-9), Some(4));
    }

    #[test]
    fn candidate_ids_roundtrip() {
        let opts = |k: usize| (0..k).map(|j| ServiceMeans::from_rates(1.0 + j as f64, 1.0)).collect();
        let c = CandidateSet::new(vec![0, 1, 2, 1], vec![opts(2), opts(3), opts(4)]).unwrap();
        assert_eq!(c.len(), 24);
        for id in 0..24 {
            assert_eq!(c.id_of(&c.choices(id)), id);
        }
        assert_eq!(c.means(23, 3), c.options(1)[2]);
    }

    #[test]
    fn optimistic_choice() {
        let truth = two_service();
        let cands = CandidateSet::grid_around(&truth, vec![0, 0], &[0.5, 1.0, 2.0], &[1.0]).unwrap();
        let costs = RelaxedCosts::compute(&cands, &truth).unwrap();
        let mut rng = stream_rng(0, 0);
        let all = ConfidenceBall {
            arrival: vec![],
            delivery: vec![],
            admitted: vec![vec![0, 1, 2]],
        };
        let pick = optimistic_param(&all, &cands, &costs, &mut rng);
        let cheapest = (0..3).min_by(|&a, &b| costs.value(a).total_cmp(&costs.value(b))).unwrap();
        assert_eq!(pick, cheapest);
        let one = ConfidenceBall {
            admitted: vec![vec![1]],
            ..all.clone()
        };
        assert_eq!(optimistic_param(&one, &cands, &costs, &mut rng), 1);
        let none = ConfidenceBall {
            admitted: vec![vec![]],
            ..all
        };
        let a = optimistic_param(&none, &cands, &costs, &mut stream_rng(5, 0));
        let b = optimistic_param(&none, &cands, &costs, &mut stream_rng(5, 0));
        assert_eq!(a, b);
        assert!(a < 3);
    }

    #[test]
    fn gap_definition() {
        let costs = RelaxedCosts {
            values: vec![0.3, 0.5, 0.5, 0.4],
        };
        assert_relative_eq!(gap(&costs, 1).unwrap(), 0.5 - 0.4);
        assert_relative_eq!(gap(&costs, 0).unwrap(), 0.3 - 0.5);
        let single = RelaxedCosts { values: vec![0.2] };
        assert_eq!(gap(&single, 0), None);
        let dup = RelaxedCosts {
            values: vec![0.3, 0.5, 0.5, 0.4, 0.5],
        };
        assert_eq!(gap(&dup, 1), gap(&costs, 1));
    }

    #[test]
    fn singleton_set_has_no_regret_bias() {
        let truth = two_service();
        let cands = CandidateSet::grid_around(&truth, vec![0, 0], &[1.0], &[1.0]).unwrap();
        let costs = RelaxedCosts::compute(&cands, &truth).unwrap();
        let cfg = UcbConfig::theorem_defaults(40 * 100, cands.min_rate()).unwrap();
        let run = UcbRun {
            episodes: 300,
            horizon: 100,
            seed: 3,
            benchmark_episodes: 300,
        };
        let rep = run_ucb_whittle(&truth, &cands, &cfg, &costs, &run, None).unwrap();
        assert!(rep.selected.iter().all(|&s| s == 0));
        let r = &rep.episodes.regret;
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        // learner and benchmark are independent estimates of the same mean
        assert!(mean.abs() < 3.0 * sd * (2.0 / r.len() as f64).sqrt(), "mean regret {mean}");
    }

    #[test]
    fn run_is_deterministic() {
        let truth = two_service();
        let cands = CandidateSet::grid_around(&truth, vec![0, 1], &[0.5, 1.0, 2.0], &[1.0]).unwrap();
        let costs = RelaxedCosts::compute(&cands, &truth).unwrap();
        let cfg = UcbConfig::theorem_defaults(2000, cands.min_rate()).unwrap().with_k1(0.01).unwrap();
        let run = UcbRun {
            episodes: 20,
            horizon: 100,
            seed: 8,
            benchmark_episodes: 50,
        };
        let a = run_ucb_whittle(&truth, &cands, &cfg, &costs, &run, None).unwrap();
        let b = run_ucb_whittle(&truth, &cands, &cfg, &costs, &run, None).unwrap();
        assert_eq!(a, b);
    }
}
