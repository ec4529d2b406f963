//! Dense linear-algebra oracles, independent of the library's own solvers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use svcplace::{PlacementAction, PlacementPolicy, ServiceParams, SystemConfig, SystemState};

/// Stationary vector of a generator `q` with a single closed class: solves
/// `pi Q = 0` with the last balance equation replaced by `sum pi = 1`.
pub fn stationary_dense(q: &DMatrix<f64>) -> DVector<f64> {
    let n = q.nrows();
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    a.lu().solve(&b).expect("nonsingular balance system")
}

/// Generator of one service served iff `s > r` (always when `r` is `None`).
pub fn single_generator(p: &ServiceParams, r: Option<usize>) -> DMatrix<f64> {
    let n = p.s_max() + 1;
    let mut q = DMatrix::zeros(n, n);
    for s in 0..n {
        if s < p.s_max() {
            q[(s, s + 1)] = p.lambda();
        }
        let active = r.is_none_or(|r| s > r);
        if active && s > 0 {
            q[(s, s - 1)] = p.mu() * s as f64;
        }
        let out: f64 = (0..n).filter(|&j| j != s).map(|j| q[(s, j)]).sum();
        q[(s, s)] = -out;
    }
    q
}

fn encode(config: &SystemConfig, queues: &[usize]) -> usize {
    queues
        .iter()
        .zip(config.services())
        .fold(0, |acc, (&s, p)| acc * (p.s_max() + 1) + s)
}

/// All joint states in encoding order.
pub fn joint_states(config: &SystemConfig) -> Vec<Vec<usize>> {
    let mut states = vec![vec![]];
    for p in config.services() {
        states = states
            .into_iter()
            .flat_map(|st| {
                (0..=p.s_max()).map(move |s| {
                    let mut v = st.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
    }
    states
}

/// Generator of the joint chain under `policy`.
pub fn joint_generator<P: PlacementPolicy + ?Sized>(config: &SystemConfig, policy: &P) -> DMatrix<f64> {
    let states = joint_states(config);
    let n = states.len();
    let mut q = DMatrix::zeros(n, n);
    let mut action = PlacementAction::none(config.len());
    for (x, st) in states.iter().enumerate() {
        action.clear();
        policy.decide(&SystemState::new(st.clone()), &mut action);
        for (i, p) in config.services().iter().enumerate() {
            if st[i] < p.s_max() {
                let mut up = st.clone();
                up[i] += 1;
                q[(x, encode(config, &up))] += p.lambda();
            }
            if action.is_active(i) && st[i] > 0 {
                let mut down = st.clone();
                down[i] -= 1;
                q[(x, encode(config, &down))] += p.mu() * st[i] as f64;
            }
        }
        let out: f64 = (0..n).filter(|&j| j != x).map(|j| q[(x, j)]).sum();
        q[(x, x)] = -out;
    }
    q
}

/// Average cost `sum_x pi(x) sum_i s_i / lambda_i` from the dense solve.
pub fn dense_policy_cost<P: PlacementPolicy + ?Sized>(config: &SystemConfig, policy: &P) -> f64 {
    let pi = stationary_dense(&joint_generator(config, policy));
    joint_states(config)
        .iter()
        .zip(pi.iter())
        .map(|(st, p)| p * config.total_cost(&SystemState::new(st.clone())))
        .sum()
}
