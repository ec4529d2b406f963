//! The Lagrangian relaxation: the capacity constraint is only required to
//! hold on average, and each service solves its own subsidized problem.

use serde::{Deserialize, Serialize};

use super::threshold::ThresholdProfile;
use crate::model::{cost, SystemConfig};

/// Resolution of the subsidy bisection.
pub const SUBSIDY_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    /// Optimal value of the relaxed problem: the Lagrangian dual at `subsidy`.
    pub value: f64,
    /// Sum of expected costs at the chosen thresholds.
    pub threshold_cost: f64,
    /// Subsidy `W*` at which the expected active count first drops to `K`.
    pub subsidy: f64,
    /// Threshold of each service (of each group for grouped problems).
    pub thresholds: Vec<usize>,
    /// Expected number of simultaneously active services at `subsidy`.
    pub active_mass: f64,
    /// `false` when even the largest subsidy leaves more than `K` services
    /// active on average; the boundary solution is returned.
    pub bracketed: bool,
}

/// Relaxed problem with precomputed threshold profiles.
#[derive(Debug, Clone)]
pub struct RelaxedProblem {
    /// Distinct service profiles with their multiplicities.
    profiles: Vec<(ThresholdProfile, usize)>,
    services: usize,
    capacity: usize,
    w_hi: f64,
}

impl RelaxedProblem {
    pub fn new(config: &SystemConfig) -> Self {
        let profiles = config.services().iter().map(|p| (ThresholdProfile::new(p), 1)).collect();
        RelaxedProblem::from_profiles(profiles, config.capacity())
    }

    /// Groups of identical services: `(profile, count)`.
    pub fn from_profiles(profiles: Vec<(ThresholdProfile, usize)>, capacity: usize) -> Self {
        let w_hi = profiles
            .iter()
            .map(|(p, _)| cost(p.params(), p.params().s_max()))
            .fold(0.0, f64::max);
        let services = profiles.iter().map(|(_, m)| m).sum();
        RelaxedProblem {
            profiles,
            services,
            capacity,
            w_hi,
        }
    }

    /// Chosen threshold of each profile group.
    fn thresholds_at(&self, w: f64) -> Vec<usize> {
        self.profiles
            .iter()
            .map(|(p, _)| p.best_threshold(w).threshold() as usize)
            .collect()
    }

    /// Expected active count `sum_i (1 - q_i(R_i(w)))`.
    pub fn active_mass(&self, w: f64) -> f64 {
        self.profiles
            .iter()
            .map(|(p, m)| *m as f64 * (1.0 - p.passive_mass(p.best_threshold(w).threshold() as usize)))
            .sum()
    }

    /// Lagrangian dual `sum_i min_R h_i^R(w) + w (N - K)`.
    pub fn dual(&self, w: f64) -> f64 {
        let n = self.services as f64;
        self.profiles
            .iter()
            .map(|(p, m)| *m as f64 * p.min_subsidized_cost(w))
            .sum::<f64>()
            + w * (n - self.capacity as f64)
    }

    fn solution_at(&self, w: f64, bracketed: bool) -> RelaxedSolution {
        let thresholds = self.thresholds_at(w);
        let threshold_cost = self
            .profiles
            .iter()
            .zip(&thresholds)
            .map(|((p, m), &r)| *m as f64 * p.expected_cost(r))
            .sum();
        RelaxedSolution {
            value: self.dual(w),
            threshold_cost,
            subsidy: w,
            active_mass: self.active_mass(w),
            thresholds,
            bracketed,
        }
    }

    pub fn solve(&self) -> RelaxedSolution {
        let k = self.capacity as f64;
        if self.active_mass(0.0) <= k {
            return self.solution_at(0.0, true);
        }
        if self.active_mass(self.w_hi) > k {
            return self.solution_at(self.w_hi, false);
        }
        let (mut lo, mut hi) = (0.0, self.w_hi);
        while hi - lo > SUBSIDY_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            if self.active_mass(mid) <= k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        self.solution_at(hi, true)
    }
}

/// Optimal value of the relaxed problem.
///
/// The dual is concave and piecewise linear in the subsidy, with slope equal
/// to the expected active count minus `K`; its maximum sits where that count
/// crosses `K`, which bisection locates to [`SUBSIDY_RESOLUTION`].
pub fn relaxed_value(config: &SystemConfig) -> RelaxedSolution {
    RelaxedProblem::new(config).solve()
}
