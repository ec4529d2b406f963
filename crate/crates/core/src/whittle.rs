//! Whittle index tables and the top-K index rule.
//!
//! Thresholds `R` and `R + 1` prescribe different actions only at state
//! `R + 1`, so the closed-form ratio for threshold `R` is the index of state
//! `R + 1`. State 0 has index 0: serving an empty queue changes nothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::threshold::ThresholdProfile;
use crate::model::{PlacementAction, ServiceParams, SystemConfig, SystemState};
use crate::policy::PlacementPolicy;

/// Smallest admissible passive-mass difference in the index ratio.
pub const DENOMINATOR_FLOOR: f64 = 1e-14;

/// Closed-form ratio comparing thresholds `r` and `r + 1`.
pub fn whittle_index_raw(params: &ServiceParams, r: usize) -> Result<f64> {
    if r + 2 > params.s_max() {
        return Err(Error::ThresholdOutOfRange {
            threshold: r,
            max: params.s_max() - 2,
            s_max: params.s_max(),
        });
    }
    raw_from_profile(&ThresholdProfile::new(params), r)
}

fn raw_from_profile(profile: &ThresholdProfile, r: usize) -> Result<f64> {
    let den = profile.passive_mass(r + 1) - profile.passive_mass(r);
    if den <= DENOMINATOR_FLOOR {
        return Err(Error::DegenerateDenominator {
            threshold: r,
            denominator: den,
        });
    }
    Ok((profile.expected_cost(r + 1) - profile.expected_cost(r)) / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    ClosedForm,
    Fallback,
    Learned,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Provenance::ClosedForm => "closed-form",
            Provenance::Fallback => "fallback",
            Provenance::Learned => "learned",
        })
    }
}

/// Index values `W(s)` for `s = 0..s_max-1` of one service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittleTable {
    values: Vec<f64>,
    provenance: Vec<Provenance>,
    monotone_closed_form: bool,
}

impl WhittleTable {
    /// Builds a table from given values.
    pub fn from_values(values: Vec<f64>, provenance: Vec<Provenance>, monotone_closed_form: bool) -> Self {
        assert_eq!(values.len(), provenance.len());
        assert!(!values.is_empty());
        WhittleTable {
            values,
            provenance,
            monotone_closed_form,
        }
    }

    /// Table of learned values, which need not be monotone.
    pub fn learned(values: Vec<f64>) -> Self {
        let n = values.len();
        WhittleTable::from_values(values, vec![Provenance::Learned; n], false)
    }

    /// Index of state `s`; states past the table clamp to the last entry.
    pub fn index(&self, s: usize) -> f64 {
        self.values[s.min(self.values.len() - 1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn monotone_closed_form(&self) -> bool {
        self.monotone_closed_form
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Index table of one service.
///
/// Uses the closed-form ratio when it is non-decreasing. Otherwise walks the
/// lower convex hull of the points `(passive_mass(R), expected_cost(R))`
/// starting from the always-active policy: from threshold `R_j` the next
/// threshold minimizes the comparison ratio, and that ratio becomes the index
/// of every state in `(R_j, R_{j+1}]`.
pub fn whittle_table(params: &ServiceParams) -> Result<WhittleTable> {
    let profile = ThresholdProfile::new(params);
    let n = params.s_max();
    let mut raw = Vec::with_capacity(n);
    raw.push(0.0);
    for r in 0..n - 1 {
        raw.push(raw_from_profile(&profile, r)?);
    }
    let monotone = raw.windows(2).all(|w| w[1] >= w[0]);
    if monotone {
        return Ok(WhittleTable::from_values(raw, vec![Provenance::ClosedForm; n], true));
    }
    let (values, provenance) = adaptive_greedy(&profile);
    let table = WhittleTable::from_values(values, provenance, false);
    debug_assert!(table.is_non_decreasing());
    Ok(table)
}

/// Lower-hull construction shared by the fallback path and its tests.
pub fn adaptive_greedy(profile: &ThresholdProfile) -> (Vec<f64>, Vec<Provenance>) {
    let n = profile.len();
    // Threshold -1 is always active: same cost as threshold 0, no passive mass.
    let point = |r: isize| -> (f64, f64) {
        if r < 0 {
            (profile.expected_cost(0), 0.0)
        } else {
            (profile.expected_cost(r as usize), profile.passive_mass(r as usize))
        }
    };
    let mut values = vec![0.0; n];
    let mut provenance = vec![Provenance::Fallback; n];
    let mut current: isize = -1;
    while current < n as isize - 1 {
        let (c0, m0) = point(current);
        let mut best = (f64::INFINITY, current + 1);
        for cand in (current + 1)..n as isize {
            let (c1, m1) = point(cand);
            let den = m1 - m0;
            if den <= DENOMINATOR_FLOOR {
                continue;
            }
            let ratio = (c1 - c0) / den;
            // Nearly collinear points keep the nearer threshold.
            if ratio < best.0 - 1e-9 * best.0.abs().min(1e300) {
                best = (ratio, cand);
            }
        }
        let (ratio, next) = best;
        for s in (current + 1)..=next {
            values[s as usize] = ratio;
            provenance[s as usize] = if next == current + 1 {
                Provenance::ClosedForm
            } else {
                Provenance::Fallback
            };
        }
        current = next;
    }
    // Running maximum guards against rounding in nearly collinear hulls.
    for s in 1..n {
        if values[s] < values[s - 1] {
            values[s] = values[s - 1];
        }
    }
    (values, provenance)
}

/// Tables for every service of `config`, built in parallel.
pub fn whittle_tables(config: &SystemConfig) -> Result<Vec<WhittleTable>> {
    config.services().par_iter().map(whittle_table).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexabilityReport {
    pub indexable: bool,
    /// `(w_lo, threshold at w_lo, w_hi, threshold at w_hi)` of the first
    /// decreasing pair.
    pub counterexample: Option<(f64, isize, f64, isize)>,
}

/// Checks that the optimal threshold is non-decreasing along `w_grid`.
pub fn verify_indexability(params: &ServiceParams, w_grid: &[f64]) -> IndexabilityReport {
    let profile = ThresholdProfile::new(params);
    let mut prev: Option<(f64, isize)> = None;
    for &w in w_grid {
        let r = profile.best_threshold(w).threshold();
        if let Some((pw, pr)) = prev {
            if r < pr {
                return IndexabilityReport {
                    indexable: false,
                    counterexample: Some((pw, pr, w, r)),
                };
            }
        }
        prev = Some((w, r));
    }
    IndexabilityReport {
        indexable: true,
        counterexample: None,
    }
}

fn rank_into(tables: &[WhittleTable], state: &SystemState, capacity: usize, out: &mut PlacementAction) {
    let mut cands: Vec<(f64, usize)> = state
        .queues()
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0)
        .map(|(i, &s)| (tables[i].index(s), i))
        .collect();
    let by_priority = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if cands.len() > capacity {
        cands.select_nth_unstable_by(capacity, by_priority);
        cands.truncate(capacity);
    }
    for (_, i) in cands {
        out.set(i, true);
    }
}

/// Activates the `capacity` nonempty services with the largest index; ties go
/// to the smaller service id.
pub fn index_rule_action(tables: &[WhittleTable], state: &SystemState, capacity: usize) -> PlacementAction {
    let mut out = PlacementAction::none(state.len());
    rank_into(tables, state, capacity, &mut out);
    out
}

/// The Whittle index rule as a placement policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittlePolicy {
    tables: Vec<WhittleTable>,
    capacity: usize,
}

impl WhittlePolicy {
    pub fn new(tables: Vec<WhittleTable>, capacity: usize) -> Self {
        WhittlePolicy { tables, capacity }
    }

    pub fn for_config(config: &SystemConfig) -> Result<Self> {
        Ok(WhittlePolicy::new(whittle_tables(config)?, config.capacity()))
    }

    pub fn tables(&self) -> &[WhittleTable] {
        &self.tables
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

impl PlacementPolicy for WhittlePolicy {
    fn decide(&self, state: &SystemState, out: &mut PlacementAction) {
        rank_into(&self.tables, state, self.capacity, out);
    }
}
