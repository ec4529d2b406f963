use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use svcplace::qlearn::{run_q_whittle, QLearnOptions};
use svcplace::sim::RunOptions;
use svcplace::ucb::RelaxedCosts;
use svcplace::{run_policy, stream_rng, value_iteration, whittle_table, DpOptions, WhittlePolicy};
use svcplace_bench::{learning_system, pair, service};

fn bench_whittle_table(c: &mut Criterion) {
    let mut g = c.benchmark_group("whittle_table");
    for s_max in [10, 40, 160] {
        let p = service(s_max);
        g.bench_with_input(BenchmarkId::from_parameter(s_max), &p, |b, p| {
            b.iter(|| whittle_table(black_box(p)).unwrap())
        });
    }
    g.finish();
}

fn bench_value_iteration(c: &mut Criterion) {
    let mut g = c.benchmark_group("value_iteration");
    g.sample_size(10);
    for s_max in [10, 20] {
        let config = pair(s_max);
        g.bench_with_input(BenchmarkId::from_parameter(s_max), &config, |b, cfg| {
            b.iter(|| value_iteration(black_box(cfg), &DpOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_simulation(c: &mut Criterion) {
    let config = pair(30);
    let policy = WhittlePolicy::for_config(&config).unwrap();
    c.bench_function("simulate_100k_events", |b| {
        b.iter(|| {
            let mut rng = stream_rng(1, 0);
            run_policy(&config, &policy, 100_000, &mut rng, RunOptions::default()).unwrap()
        })
    });
}

fn bench_relaxed_costs(c: &mut Criterion) {
    let (config, cands) = learning_system(10);
    c.bench_function("relaxed_costs_9_candidates", |b| {
        b.iter(|| RelaxedCosts::compute(black_box(&cands), &config).unwrap())
    });
}

fn bench_q_learning(c: &mut Criterion) {
    let p = service(5);
    let opts = QLearnOptions::new(20, 100);
    let mut g = c.benchmark_group("q_whittle");
    g.sample_size(10);
    g.bench_function("20_episodes", |b| b.iter(|| run_q_whittle(&p, &opts, 3).unwrap()));
    g.finish();
}

criterion_group!(
    benches,
    bench_whittle_table,
    bench_value_iteration,
    bench_simulation,
    bench_relaxed_costs,
    bench_q_learning
);
criterion_main!(benches);
