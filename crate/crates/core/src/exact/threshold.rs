//! Closed-form analytics of single-service threshold policies.
//!
//! Under threshold `R` a service is passive while `s <= R` and active above.
//! Starting from an empty queue the chain climbs to `R` without departures,
//! after which it lives on `{R, ..., s_max}` as a birth–death chain with birth
//! rate `lambda` and death rate `mu * s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cost, ServiceParams};

/// Threshold policy. `-1` is the always-active policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThresholdPolicy(isize);

impl ThresholdPolicy {
    pub const ALWAYS_ACTIVE: ThresholdPolicy = ThresholdPolicy(-1);

    pub fn new(threshold: isize) -> Self {
        assert!(threshold >= -1, "threshold must be >= -1");
        ThresholdPolicy(threshold)
    }

    pub fn threshold(&self) -> isize {
        self.0
    }

    /// `true` when the policy serves state `s`, i.e. `s > R`.
    pub fn is_active(&self, s: usize) -> bool {
        s as isize > self.0
    }
}

/// Stationary law of the queue length under a threshold policy, truncated at
/// `s_max` and renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    offset: usize,
    probs: Vec<f64>,
}

impl StationaryDist {
    /// First state carrying mass (the threshold itself).
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Probabilities over `0..=s_max`; entries below the offset are zero.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, s: usize) -> f64 {
        self.probs.get(s).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(s, p)| s as f64 * p)
            .sum()
    }
}

fn check_threshold(params: &ServiceParams, r: usize) -> Result<()> {
    let max = params.s_max() - 1;
    if r > max {
        return Err(Error::ThresholdOutOfRange {
            threshold: r,
            max,
            s_max: params.s_max(),
        });
    }
    Ok(())
}

/// Stationary distribution under threshold `r`:
/// `q(r + l) ∝ rho^l / ((r+1)(r+2)...(r+l))`.
pub fn stationary_dist(params: &ServiceParams, r: usize) -> Result<StationaryDist> {
    check_threshold(params, r)?;
    let s_max = params.s_max();
    let rho = params.load();
    let mut probs = vec![0.0; s_max + 1];
    let mut term = 1.0;
    probs[r] = term;
    for l in 1..=(s_max - r) {
        term *= rho / (r + l) as f64;
        probs[r + l] = term;
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(StationaryDist { offset: r, probs })
}

/// Long-run average cost `E_R[C(S)]` under threshold `r`.
pub fn expected_cost(params: &ServiceParams, r: usize) -> Result<f64> {
    let q = stationary_dist(params, r)?;
    Ok(q.probs
        .iter()
        .enumerate()
        .map(|(s, p)| cost(params, s) * p)
        .sum())
}

/// Long-run fraction of time spent passive under threshold `r`.
///
/// Only the threshold state itself is both recurrent and passive, so this is
/// `q_R(R)`.
pub fn passive_mass(params: &ServiceParams, r: usize) -> Result<f64> {
    Ok(stationary_dist(params, r)?.prob(r))
}

/// Average cost minus the subsidy earned while passive:
/// `E_R[C] - w * P_R(passive)`.
pub fn threshold_avg_cost(params: &ServiceParams, r: usize, w: f64) -> Result<f64> {
    Ok(expected_cost(params, r)? - w * passive_mass(params, r)?)
}

/// Threshold minimizing the subsidized average cost; ties go to the smaller
/// threshold.
pub fn best_threshold(params: &ServiceParams, w: f64) -> ThresholdPolicy {
    ThresholdProfile::new(params).best_threshold(w)
}

/// Expected cost and passive mass for every threshold `0..s_max`, computed
/// once so that subsidy sweeps are cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdProfile {
    params: ServiceParams,
    expected_cost: Vec<f64>,
    passive_mass: Vec<f64>,
}

impl ThresholdProfile {
    pub fn new(params: &ServiceParams) -> Self {
        let n = params.s_max();
        let mut expected_cost = Vec::with_capacity(n);
        let mut passive_mass = Vec::with_capacity(n);
        for r in 0..n {
            let q = stationary_dist(params, r).expect("threshold in range");
            expected_cost.push(q.mean() / params.lambda());
            passive_mass.push(q.prob(r));
        }
        ThresholdProfile {
            params: *params,
            expected_cost,
            passive_mass,
        }
    }

    pub fn params(&self) -> &ServiceParams {
        &self.params
    }

    /// Number of admissible thresholds (`s_max`).
    pub fn len(&self) -> usize {
        self.expected_cost.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expected_cost.is_empty()
    }

    pub fn expected_cost(&self, r: usize) -> f64 {
        self.expected_cost[r]
    }

    pub fn passive_mass(&self, r: usize) -> f64 {
        self.passive_mass[r]
    }

    pub fn subsidized_cost(&self, r: usize, w: f64) -> f64 {
        self.expected_cost[r] - w * self.passive_mass[r]
    }

    pub fn best_threshold(&self, w: f64) -> ThresholdPolicy {
        let mut best = 0;
        let mut best_value = self.subsidized_cost(0, w);
        for r in 1..self.len() {
            let v = self.subsidized_cost(r, w);
            if v < best_value {
                best = r;
                best_value = v;
            }
        }
        ThresholdPolicy::new(best as isize)
    }

    /// `min_R h^R(w)`.
    pub fn min_subsidized_cost(&self, w: f64) -> f64 {
        (0..self.len())
            .map(|r| self.subsidized_cost(r, w))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::E;

    fn p55() -> ServiceParams {
        ServiceParams::new(5.0, 5.0, 60).unwrap()
    }

    #[test]
    fn unit_load_threshold_zero_is_poisson() {
        let q = stationary_dist(&p55(), 0).unwrap();
        assert_relative_eq!(q.prob(0), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(q.prob(1), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(q.prob(2), (-1.0f64).exp() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn unit_load_threshold_one() {
        let q = stationary_dist(&p55(), 1).unwrap();
        assert_eq!(q.prob(0), 0.0);
        assert_relative_eq!(q.prob(1), 1.0 / (E - 1.0), max_relative = 1e-12);
        assert_relative_eq!(q.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_mass_below_threshold() {
        let p = ServiceParams::new(12.0, 3.0, 30).unwrap();
        for r in 0..30 {
            let q = stationary_dist(&p, r).unwrap();
            assert!(q.probs()[..r].iter().all(|&x| x == 0.0));
            assert_eq!(q.offset(), r);
        }
    }

    #[test]
    fn rejects_degenerate_threshold() {
        let p = ServiceParams::new(1.0, 1.0, 10).unwrap();
        assert!(matches!(
            stationary_dist(&p, 10),
            Err(Error::ThresholdOutOfRange { threshold: 10, .. })
        ));
    }

    #[test]
    fn expected_cost_matches_series() {
        assert_relative_eq!(expected_cost(&p55(), 0).unwrap(), 0.2, max_relative = 1e-12);
        assert_relative_eq!(
            expected_cost(&p55(), 1).unwrap(),
            E / (E - 1.0) / 5.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn passive_mass_values() {
        assert_relative_eq!(passive_mass(&p55(), 0).unwrap(), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(passive_mass(&p55(), 1).unwrap(), 1.0 / (E - 1.0), max_relative = 1e-12);
    }

    #[test]
    fn subsidized_cost() {
        let p = p55();
        assert_eq!(threshold_avg_cost(&p, 3, 0.0).unwrap(), expected_cost(&p, 3).unwrap());
        assert_relative_eq!(
            threshold_avg_cost(&p, 0, 1.0).unwrap(),
            0.2 - (-1.0f64).exp(),
            max_relative = 1e-12
        );
        // affine in w with slope -passive_mass
        let slope = threshold_avg_cost(&p, 2, 1.0).unwrap() - threshold_avg_cost(&p, 2, 0.0).unwrap();
        assert_relative_eq!(slope, -passive_mass(&p, 2).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn best_threshold_extremes() {
        let p = ServiceParams::new(5.0, 5.0, 20).unwrap();
        assert_eq!(best_threshold(&p, 0.0), ThresholdPolicy::new(0));
        let huge = 100.0 * cost(&p, p.s_max());
        assert_eq!(best_threshold(&p, huge), ThresholdPolicy::new(19));
    }

    #[test]
    fn expected_cost_and_passive_mass_increase_with_threshold() {
        for (lambda, mu) in [(5.0, 5.0), (2.0, 4.0), (30.0, 5.0)] {
            let profile = ThresholdProfile::new(&ServiceParams::new(lambda, mu, 40).unwrap());
            for r in 0..profile.len() - 1 {
                assert!(profile.expected_cost(r + 1) > profile.expected_cost(r));
                assert!(profile.passive_mass(r + 1) > profile.passive_mass(r));
            }
        }
    }

    #[test]
    fn threshold_policy_action() {
        let pol = ThresholdPolicy::new(2);
        assert!(!pol.is_active(0));
        assert!(!pol.is_active(2));
        assert!(pol.is_active(3));
        assert!(ThresholdPolicy::ALWAYS_ACTIVE.is_active(0));
    }
}
