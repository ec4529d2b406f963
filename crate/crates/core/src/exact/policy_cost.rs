//! Exact long-run cost of a stationary policy on the truncated joint space.
//!
//! The policy-induced CTMC is reduced to its unique closed class, whose
//! balance equations are solved directly. Every transition moves one queue by
//! one unit, so in mixed-radix order the generator is banded with half-width
//! equal to the largest stride.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::dp::{DpOptions, StateSpace, Transitions};
use crate::error::{Error, Result};
use crate::model::{PlacementAction, SystemConfig};
use crate::policy::PlacementPolicy;

/// Stationary law of a policy together with its average cost.
#[derive(Debug, Clone)]
pub struct PolicyCost {
    pub average_cost: f64,
    /// Probability of every encoded joint state; transient states carry zero.
    pub distribution: Vec<f64>,
    /// Encoded states of the recurrent class.
    pub recurrent: Vec<usize>,
}

struct PolicyChain {
    space: StateSpace,
    cost: Vec<f64>,
    /// Outgoing `(target, rate)` under the policy.
    out: Vec<Vec<(usize, f64)>>,
}

fn build_chain<P: PlacementPolicy + ?Sized>(
    config: &SystemConfig,
    policy: &P,
    opts: &DpOptions,
) -> Result<PolicyChain> {
    let space = StateSpace::new(config);
    opts.check_budget(&space)?;
    let trans = Transitions::build(config, &space);
    let mut out = Vec::with_capacity(space.size());
    let mut a = PlacementAction::none(config.len());
    for x in 0..space.size() {
        let state = space.decode(x);
        a.clear();
        policy.decide(&state, &mut a);
        config.check_action(&a)?;
        let mut edges = trans.births[x].clone();
        for i in a.active() {
            if let Some(e) = trans.deaths[x][i] {
                edges.push(e);
            }
        }
        out.push(edges);
    }
    Ok(PolicyChain {
        space,
        cost: trans.cost,
        out,
    })
}

fn closed_classes(chain: &PolicyChain) -> Vec<Vec<usize>> {
    let n = chain.space.size();
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * 4);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for (x, edges) in chain.out.iter().enumerate() {
        for &(y, _) in edges {
            g.add_edge(nodes[x], nodes[y], ());
        }
    }
    let sccs = tarjan_scc(&g);
    let mut comp = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let mut closed: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(c, members)| {
            members
                .iter()
                .all(|v| chain.out[v.index()].iter().all(|&(y, _)| comp[y] == *c))
        })
        .map(|(_, members)| {
            let mut m: Vec<usize> = members.iter().map(|v| v.index()).collect();
            m.sort_unstable();
            m
        })
        .collect();
    closed.sort();
    closed
}

/// Dense band storage for an `n x n` matrix with half-width `w`.
struct Band {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl Band {
    fn new(n: usize, w: usize) -> Self {
        Band {
            n,
            w,
            data: vec![0.0; n * (2 * w + 1)],
        }
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        debug_assert!(i.abs_diff(j) <= self.w);
        &mut self.data[i * (2 * self.w + 1) + (j + self.w - i)]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * (2 * self.w + 1) + (j + self.w - i)]
    }

    /// Gaussian elimination without pivoting. Safe for the column
    /// diagonally dominant systems produced here.
    fn solve(mut self, mut b: Vec<f64>) -> Vec<f64> {
        let (n, w) = (self.n, self.w);
        for k in 0..n {
            let pivot = self.get(k, k);
            let last = (k + w).min(n - 1);
            for i in (k + 1)..=last {
                let f = self.get(i, k) / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in k..=last {
                    let u = self.get(k, j);
                    *self.at(i, j) -= f * u;
                }
                b[i] -= f * b[k];
            }
        }
        for k in (0..n).rev() {
            let last = (k + w).min(n - 1);
            let mut acc = b[k];
            for j in (k + 1)..=last {
                acc -= self.get(k, j) * b[j];
            }
            b[k] = acc / self.get(k, k);
        }
        b
    }
}

fn stationary_on_class(chain: &PolicyChain, class: &[usize]) -> Vec<f64> {
    let m = class.len();
    if m == 1 {
        return vec![1.0];
    }
    let mut pos = vec![usize::MAX; chain.space.size()];
    for (k, &x) in class.iter().enumerate() {
        pos[x] = k;
    }
    // Unknowns pi[1..m] with pi[0] = 1; equation for column j != 0 of
    // pi Q = 0. Indices are shifted down by one.
    let pos = &pos;
    let width = class
        .iter()
        .flat_map(|&x| chain.out[x].iter().map(move |&(y, _)| pos[x].abs_diff(pos[y])))
        .max()
        .unwrap_or(1)
        .max(1);
    let mut a = Band::new(m - 1, width);
    let mut rhs = vec![0.0; m - 1];
    for &x in class {
        let i = pos[x];
        let total: f64 = chain.out[x].iter().map(|&(_, r)| r).sum();
        if i > 0 {
            *a.at(i - 1, i - 1) -= total;
        }
        for &(y, r) in &chain.out[x] {
            let j = pos[y];
            if j == 0 {
                continue;
            }
            if i == 0 {
                rhs[j - 1] -= r;
            } else {
                *a.at(j - 1, i - 1) += r;
            }
        }
    }
    let tail = a.solve(rhs);
    let mut pi = Vec::with_capacity(m);
    pi.push(1.0);
    pi.extend(tail);
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    pi
}

/// Stationary distribution and average cost of `policy`.
///
/// Fails with [`Error::ReducibleChain`] when the policy induces more than one
/// closed class, since the long-run cost then depends on the initial state.
pub fn exact_policy_cost<P: PlacementPolicy + ?Sized>(
    config: &SystemConfig,
    policy: &P,
    opts: &DpOptions,
) -> Result<PolicyCost> {
    let chain = build_chain(config, policy, opts)?;
    let mut classes = closed_classes(&chain);
    if classes.len() != 1 {
        return Err(Error::ReducibleChain {
            classes: classes
                .iter()
                .map(|c| c.iter().map(|&x| chain.space.decode(x).queues().to_vec()).collect())
                .collect(),
        });
    }
    let class = classes.pop().expect("one class");
    let pi = stationary_on_class(&chain, &class);
    let mut distribution = vec![0.0; chain.space.size()];
    let mut average_cost = 0.0;
    for (&x, &p) in class.iter().zip(&pi) {
        distribution[x] = p;
        average_cost += p * chain.cost[x];
    }
    Ok(PolicyCost {
        average_cost,
        distribution,
        recurrent: class,
    })
}
