//! The controlled birth–death system: N services sharing an edge server that
//! can host at most K of them at a time.
//!
//! Requests for service `i` arrive as a Poisson process with rate `lambda`.
//! While the service is placed (active), each of the `s` waiting customers is
//! served independently at rate `mu`, so the queue empties at rate `mu * s`.
//! A passive service accumulates requests without departures. Queues are
//! truncated at `s_max`: arrivals to a full queue are dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates and truncation of a single service.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawServiceParams", into = "RawServiceParams")]
pub struct ServiceParams {
    lambda: f64,
    mu: f64,
    s_max: usize,
}

#[derive(Serialize, Deserialize)]
struct RawServiceParams {
    lambda: f64,
    mu: f64,
    s_max: usize,
}

impl TryFrom<RawServiceParams> for ServiceParams {
    type Error = Error;

    fn try_from(raw: RawServiceParams) -> Result<Self> {
        ServiceParams::new(raw.lambda, raw.mu, raw.s_max)
    }
}

impl From<ServiceParams> for RawServiceParams {
    fn from(p: ServiceParams) -> Self {
        RawServiceParams {
            lambda: p.lambda,
            mu: p.mu,
            s_max: p.s_max,
        }
    }
}

impl ServiceParams {
    pub fn new(lambda: f64, mu: f64, s_max: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("must be positive, got {lambda}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::invalid("mu", format!("must be positive, got {mu}")));
        }
        if s_max < 2 {
            return Err(Error::invalid("s_max", format!("must be at least 2, got {s_max}")));
        }
        Ok(ServiceParams { lambda, mu, s_max })
    }

    /// Arrival rate.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Per-customer delivery rate.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn s_max(&self) -> usize {
        self.s_max
    }

    /// Offered load `lambda / mu`.
    pub fn load(&self) -> f64 {
        self.lambda / self.mu
    }

    pub fn with_s_max(&self, s_max: usize) -> Result<Self> {
        ServiceParams::new(self.lambda, self.mu, s_max)
    }

    /// Largest total event rate this service can produce.
    pub fn max_rate(&self) -> f64 {
        self.lambda + self.mu * self.s_max as f64
    }
}

/// Instantaneous cost of holding `s` requests: `s / lambda`.
///
/// By Little's law this is the latency contribution of the queue. It does not
/// depend on the placement decision.
pub fn cost(params: &ServiceParams, s: usize) -> f64 {
    s as f64 / params.lambda
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub birth: f64,
    pub death: f64,
}

impl Rates {
    pub fn total(&self) -> f64 {
        self.birth + self.death
    }
}

/// Birth and death rates of one service in state `s` under action `active`.
pub fn rates(params: &ServiceParams, s: usize, active: bool) -> Rates {
    debug_assert!(s <= params.s_max);
    let birth = if s < params.s_max { params.lambda } else { 0.0 };
    let death = if active { params.mu * s as f64 } else { 0.0 };
    Rates { birth, death }
}

/// N services and the edge capacity K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSystemConfig", into = "RawSystemConfig")]
pub struct SystemConfig {
    services: Vec<ServiceParams>,
    capacity: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSystemConfig {
    services: Vec<ServiceParams>,
    capacity: usize,
}

impl TryFrom<RawSystemConfig> for SystemConfig {
    type Error = Error;

    fn try_from(raw: RawSystemConfig) -> Result<Self> {
        SystemConfig::new(raw.services, raw.capacity)
    }
}

impl From<SystemConfig> for RawSystemConfig {
    fn from(c: SystemConfig) -> Self {
        RawSystemConfig {
            services: c.services,
            capacity: c.capacity,
        }
    }
}

impl SystemConfig {
    /// `capacity` must lie in `1..=services.len()`. `capacity == N` is allowed
    /// so that single-service problems share the same machinery.
    pub fn new(services: Vec<ServiceParams>, capacity: usize) -> Result<Self> {
        if services.is_empty() {
            return Err(Error::invalid("services", "at least one service is required"));
        }
        if capacity == 0 || capacity > services.len() {
            return Err(Error::invalid(
                "capacity",
                format!("must be in 1..={}, got {capacity}", services.len()),
            ));
        }
        Ok(SystemConfig { services, capacity })
    }

    pub fn services(&self) -> &[ServiceParams] {
        &self.services
    }

    pub fn service(&self, i: usize) -> &ServiceParams {
        &self.services[i]
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Upper bound on the total event rate out of any state.
    pub fn max_total_rate(&self) -> f64 {
        self.services.iter().map(ServiceParams::max_rate).sum()
    }

    pub fn zero_state(&self) -> SystemState {
        SystemState::zeros(self.len())
    }

    pub fn total_cost(&self, state: &SystemState) -> f64 {
        self.services
            .iter()
            .zip(state.queues())
            .map(|(p, &s)| cost(p, s))
            .sum()
    }

    pub fn check_state(&self, state: &SystemState) -> Result<()> {
        if state.len() != self.len() {
            return Err(Error::invalid(
                "state",
                format!("has {} entries for {} services", state.len(), self.len()),
            ));
        }
        for (i, (&s, p)) in state.queues().iter().zip(&self.services).enumerate() {
            if s > p.s_max {
                return Err(Error::invalid(
                    "state",
                    format!("queue {i} holds {s} > s_max {}", p.s_max),
                ));
            }
        }
        Ok(())
    }

    pub fn check_action(&self, action: &PlacementAction) -> Result<()> {
        if action.len() != self.len() {
            return Err(Error::invalid(
                "action",
                format!("has {} entries for {} services", action.len(), self.len()),
            ));
        }
        if action.active_count() > self.capacity {
            return Err(Error::invalid(
                "action",
                format!(
                    "activates {} services, capacity is {}",
                    action.active_count(),
                    self.capacity
                ),
            ));
        }
        Ok(())
    }
}

/// Joint queue-length vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemState(Vec<usize>);

impl SystemState {
    pub fn new(queues: Vec<usize>) -> Self {
        SystemState(queues)
    }

    pub fn zeros(n: usize) -> Self {
        SystemState(vec![0; n])
    }

    pub fn queues(&self) -> &[usize] {
        &self.0
    }

    pub fn queues_mut(&mut self) -> &mut [usize] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&s| s == 0)
    }

    pub fn reset(&mut self) {
        self.0.iter_mut().for_each(|s| *s = 0);
    }
}

impl std::ops::Index<usize> for SystemState {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl From<Vec<usize>> for SystemState {
    fn from(v: Vec<usize>) -> Self {
        SystemState(v)
    }
}

/// Which services are placed on the edge.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlacementAction(Vec<bool>);

impl PlacementAction {
    pub fn none(n: usize) -> Self {
        PlacementAction(vec![false; n])
    }

    pub fn from_active(n: usize, active: &[usize]) -> Self {
        let mut a = PlacementAction::none(n);
        for &i in active {
            a.0[i] = true;
        }
        a
    }

    pub fn new(active: Vec<bool>) -> Self {
        PlacementAction(active)
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, active: bool) {
        self.0[i] = active;
    }

    pub fn clear(&mut self) {
        self.0.iter_mut().for_each(|a| *a = false);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&a| a).count()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(lambda: f64, mu: f64) -> ServiceParams {
        ServiceParams::new(lambda, mu, 20).unwrap()
    }

    #[test]
    fn cost_is_queue_over_arrival_rate() {
        assert_relative_eq!(cost(&params(10.0, 1.0), 5), 0.5);
        assert_eq!(cost(&params(7.0, 1.0), 0), 0.0);
        assert_relative_eq!(cost(&params(25.0, 1.0), 3), 0.12);
    }

    #[test]
    fn rates_follow_mmk_departures() {
        let p = params(4.0, 5.0);
        assert_eq!(rates(&p, 0, true).death, 0.0);
        assert_eq!(rates(&p, 3, true), Rates { birth: 4.0, death: 15.0 });
        assert_eq!(rates(&p, 3, false), Rates { birth: 4.0, death: 0.0 });
    }

    #[test]
    fn arrivals_stop_at_truncation() {
        let p = ServiceParams::new(4.0, 5.0, 6).unwrap();
        assert_eq!(rates(&p, 6, true), Rates { birth: 0.0, death: 30.0 });
    }

    #[test]
    fn rejects_invalid_params() {
        assert!(ServiceParams::new(0.0, 1.0, 5).is_err());
        assert!(ServiceParams::new(1.0, -1.0, 5).is_err());
        assert!(ServiceParams::new(1.0, 1.0, 1).is_err());
        let p = params(1.0, 1.0);
        assert!(SystemConfig::new(vec![p, p], 0).is_err());
        assert!(SystemConfig::new(vec![p, p], 3).is_err());
        assert!(SystemConfig::new(vec![], 1).is_err());
    }

    #[test]
    fn params_deserialize_with_validation() {
        let ok: ServiceParams = serde_json::from_str(r#"{"lambda":2.0,"mu":1.0,"s_max":9}"#).unwrap();
        assert_eq!(ok.s_max(), 9);
        let bad = serde_json::from_str::<ServiceParams>(r#"{"lambda":-2.0,"mu":1.0,"s_max":9}"#);
        assert!(bad.unwrap_err().to_string().contains("lambda"));
    }

    proptest! {
        #[test]
        fn cost_monotone_and_rates_bounded(
            lambda in 0.1f64..50.0, mu in 0.1f64..20.0, s_max in 2usize..80, s in 0usize..80, active: bool
        ) {
            let p = ServiceParams::new(lambda, mu, s_max).unwrap();
            let s = s.min(s_max);
            if s < s_max {
                prop_assert!(cost(&p, s) <= cost(&p, s + 1));
            }
            let r = rates(&p, s, active);
            prop_assert!(r.total() <= p.max_rate() + 1e-12);
            if !active {
                prop_assert_eq!(r.death, 0.0);
            }
        }
    }
}
