mod common;

use common::{dense_policy_cost, single_generator, stationary_dense};
use svcplace::exact::{expected_cost, stationary_dist};
use svcplace::sim::{run_policy_traced, RunOptions};
use svcplace::ucb::{confidence_ball, CandidateSet, EstimatorState, UcbConfig};
use svcplace::{
    exact_policy_cost, stream_rng, value_iteration, DpOptions, FnPolicy, ServiceParams, SystemConfig,
    ThresholdPlacement, WhittlePolicy,
};

#[test]
fn closed_form_distribution_matches_balance_equations() {
    for (lambda, r) in [(2.5, 0), (5.0, 1), (10.0, 3), (15.0, 5), (7.5, 12)] {
        let p = ServiceParams::new(lambda, 5.0, 40).unwrap();
        let pi = stationary_dense(&single_generator(&p, Some(r)));
        let q = stationary_dist(&p, r).unwrap();
        for s in 0..=40 {
            assert!((pi[s] - q.prob(s)).abs() < 1e-10, "lambda {lambda}, R {r}, s {s}");
        }
    }
}

fn systems() -> Vec<SystemConfig> {
    vec![
        SystemConfig::new(
            vec![
                ServiceParams::new(20.0, 5.0, 12).unwrap(),
                ServiceParams::new(30.0, 5.0, 10).unwrap(),
            ],
            1,
        )
        .unwrap(),
        SystemConfig::new(
            vec![
                ServiceParams::new(4.0, 2.0, 6).unwrap(),
                ServiceParams::new(9.0, 3.0, 5).unwrap(),
                ServiceParams::new(2.0, 1.0, 7).unwrap(),
            ],
            2,
        )
        .unwrap(),
    ]
}

#[test]
fn exact_policy_cost_matches_dense_solve() {
    let opts = DpOptions::default();
    for c in systems() {
        let whittle = WhittlePolicy::for_config(&c).unwrap();
        let got = exact_policy_cost(&c, &whittle, &opts).unwrap().average_cost;
        assert!((got - dense_policy_cost(&c, &whittle)).abs() < 1e-9);

        let longest = FnPolicy(|s: &svcplace::SystemState| {
            let q = s.queues();
            let i = (0..q.len()).max_by_key(|&i| (q[i], std::cmp::Reverse(i))).unwrap();
            if q[i] > 0 {
                vec![i]
            } else {
                vec![]
            }
        });
        let got = exact_policy_cost(&c, &longest, &opts).unwrap().average_cost;
        assert!((got - dense_policy_cost(&c, &longest)).abs() < 1e-9);
    }
}

#[test]
fn optimal_gain_matches_dense_cost_of_optimal_policy() {
    let c = &systems()[0];
    let dp = value_iteration(c, &DpOptions::default()).unwrap();
    let dense = dense_policy_cost(c, &dp);
    assert!((dp.average_cost() - dense).abs() < 1e-7, "{} vs {dense}", dp.average_cost());
}

#[test]
fn simulated_threshold_cost_within_three_standard_errors() {
    let p = ServiceParams::new(10.0, 5.0, 20).unwrap();
    let c = SystemConfig::new(vec![p], 1).unwrap();
    let policy = ThresholdPlacement::new(vec![2]);
    let costs: Vec<f64> = (0..20)
        .map(|k| {
            let mut rng = stream_rng(77, k);
            svcplace::run_policy(&c, &policy, 50_000, &mut rng, RunOptions::default())
                .unwrap()
                .average_cost
        })
        .collect();
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let se = (costs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let want = expected_cost(&p, 2).unwrap();
    assert!((mean - want).abs() < 3.0 * se, "{mean} vs {want} (se {se})");
}

#[test]
fn delivery_estimate_concentrates() {
    let p = ServiceParams::new(10.0, 5.0, 30).unwrap();
    let c = SystemConfig::new(vec![p], 1).unwrap();
    let always = ThresholdPlacement::new(vec![-1]);
    let mut est = EstimatorState::new(&c);
    let mut rng = stream_rng(5, 0);
    let mut events = 0;
    while est.delivery_count(0) < 10_000 {
        run_policy_traced(&c, &always, 1000, &mut rng, RunOptions::default(), |rec| est.observe(rec)).unwrap();
        events += 1000;
        assert!(events < 1_000_000);
    }
    let n = est.delivery_count(0) as f64;
    let m = est.delivery_mean(0).unwrap();
    assert!((m - 0.2).abs() < 3.0 * 0.2 / n.sqrt(), "{m}");
    let a = est.arrival_mean(0).unwrap();
    assert!((a - 0.1).abs() < 4.0 * 0.1 / (est.arrival_count(0) as f64).sqrt(), "{a}");
}

#[test]
fn confidence_ball_covers_truth() {
    let p = ServiceParams::new(10.0, 5.0, 5).unwrap();
    let c = SystemConfig::new(vec![p, p], 1).unwrap();
    let cands = CandidateSet::grid_around(&c, vec![0, 0], &[2.0 / 3.0, 1.0, 1.5], &[2.0 / 3.0, 1.0, 1.5]).unwrap();
    let truth = cands.locate(&c, 1e-9).unwrap();
    let horizon = 2000;
    let cfg = UcbConfig::theorem_defaults(horizon, cands.min_rate()).unwrap();
    let policy = WhittlePolicy::for_config(&c).unwrap();
    let reps = 500;
    let covered = (0..reps)
        .filter(|&k| {
            let mut est = EstimatorState::new(&c);
            let mut rng = stream_rng(900, k);
            run_policy_traced(&c, &policy, horizon, &mut rng, RunOptions::default(), |rec| est.observe(rec)).unwrap();
            confidence_ball(&est, &cfg, &cands).contains(&cands, truth)
        })
        .count();
    assert!(covered as f64 / reps as f64 >= 1.0 - 2.0 * cfg.delta);
}
