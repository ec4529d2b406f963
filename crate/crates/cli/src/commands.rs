//! One function per subcommand, each turning a scenario into a [`Bundle`].

use serde_json::json;

use svcplace::experiments::{
    run_convergence, run_mse_vs_n, run_switching_curve, run_table1, service_types, switching_config,
    CONVERGENCE_TOLERANCE, ERROR_FLOOR,
};
use svcplace::qlearn::{learn_system, learn_system_baseline, IndexIterates};
use svcplace::sim::{RandomPlacement, RunOptions};
use svcplace::ucb::{RelaxedCosts, UcbRun};
use svcplace::{
    exact_policy_cost, relaxed_value, run_policy, run_ucb_whittle, stream_rng, value_iteration, whittle_table,
    CandidateSet, FnPolicy, PlacementPolicy, WhittlePolicy, WhittleTable,
};

use crate::bundle::{Bundle, Cell, Table};
use crate::scenario::{PolicySpec, Scenario};
use crate::{CliError, Command};

pub fn execute(command: &Command, s: &Scenario) -> Result<Bundle, CliError> {
    match command {
        Command::WhittleTable => whittle_tables(s),
        Command::Optimal => optimal(s),
        Command::Simulate(_) => simulate(s),
        Command::LearnUcb(_) => learn_ucb(s),
        Command::LearnQ(_) => learn_q(s, false),
        Command::Baseline(_) => learn_q(s, true),
        Command::Table1(_) => table1(s),
        Command::SwitchingCurve => switching(s),
        Command::Convergence(_) => convergence(s),
        Command::MseVsN(_) => mse(s),
    }
}

const TABLE_HEADER: [&str; 4] = ["service_id", "state", "index", "provenance"];

fn push_table(t: &mut Table, service: usize, table: &WhittleTable) {
    for (state, (&v, p)) in table.values().iter().zip(table.provenance()).enumerate() {
        t.push(vec![service.into(), state.into(), v.into(), p.to_string().into()]);
    }
}

fn whittle_tables(s: &Scenario) -> Result<Bundle, CliError> {
    let config = s.system_config()?;
    let mut b = Bundle::new("whittle-table");
    let mut t = Table::new("whittle_table", &TABLE_HEADER);
    let mut monotone = Vec::new();
    for (i, p) in config.services().iter().enumerate() {
        let table = whittle_table(p)?;
        monotone.push(table.monotone_closed_form());
        push_table(&mut t, i, &table);
    }
    b.tables.push(t);
    b.result("monotone_closed_form", monotone);
    b.meta("provenance", "closed-form: threshold indifference value; fallback: lower convex hull of the threshold cost profile");
    Ok(b)
}

fn optimal(s: &Scenario) -> Result<Bundle, CliError> {
    let config = s.system_config()?;
    let dp = s.dp_options();
    let sol = value_iteration(&config, &dp)?;
    let n = config.len();
    let mut header: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    header.push("active".into());
    header.push("relative_value".into());
    let mut t = Table {
        name: "optimal_policy".into(),
        header,
        rows: Vec::new(),
    };
    for state in sol.space().states() {
        let mut row: Vec<Cell> = state.queues().iter().map(|&q| q.into()).collect();
        let active: Vec<String> = sol.optimal_action(&state).active().map(|i| i.to_string()).collect();
        row.push(active.join(" ").into());
        row.push(sol.value(&state).into());
        t.push(row);
    }
    let whittle = WhittlePolicy::for_config(&config)?;
    let whittle_cost = exact_policy_cost(&config, &whittle, &dp).map(|c| c.average_cost).ok();
    let bound = relaxed_value(&config).value;
    let mut b = Bundle::new("optimal");
    b.tables.push(t);
    b.result("optimal_cost", sol.average_cost());
    b.result("whittle_cost", whittle_cost);
    b.result(
        "gap_percent",
        whittle_cost.map(|w| 100.0 * (w - sol.average_cost()) / sol.average_cost()),
    );
    b.result("relaxed_lower_bound", bound);
    b.result("iterations", sol.iterations());
    b.result("final_span", sol.final_span());
    b.meta("active", "space-separated ids of the services placed in each state");
    Ok(b)
}

fn simulate(s: &Scenario) -> Result<Bundle, CliError> {
    let config = s.system_config()?;
    let opts = RunOptions {
        track_latency: s.simulate.track_latency,
    };
    let mut rng = stream_rng(s.seed, 0);
    let policy: Box<dyn PlacementPolicy> = match s.simulate.policy {
        PolicySpec::Whittle => Box::new(WhittlePolicy::for_config(&config)?),
        PolicySpec::Random => Box::new(RandomPlacement::new(config.capacity(), s.seed ^ 0x5EED)),
        PolicySpec::Optimal => {
            let sol = value_iteration(&config, &s.dp_options())?;
            Box::new(FnPolicy(move |st: &svcplace::SystemState| {
                sol.optimal_action(st).active().collect::<Vec<_>>()
            }))
        }
    };
    let run = run_policy(&config, &policy, s.simulate.events, &mut rng, opts)?;
    let mut t = Table::new(
        "simulation",
        &["service_id", "mean_queue", "arrival_rate", "throughput", "latency_mean", "latency_count"],
    );
    for i in 0..config.len() {
        let lat = run.latency.as_ref().map(|l| &l[i]);
        t.push(vec![
            i.into(),
            run.mean_queues[i].into(),
            run.arrival_rates[i].into(),
            run.throughput[i].into(),
            lat.map(|l| l.mean).into(),
            lat.map(|l| l.count).into(),
        ]);
    }
    let mut b = Bundle::new("simulate");
    b.tables.push(t);
    b.result("average_cost", run.average_cost);
    b.result("events", run.events);
    b.result("time", run.time);
    b.meta("policy", s.simulate.policy);
    b.meta("average_cost", "time average of the summed holding cost");
    Ok(b)
}

fn learn_ucb(s: &Scenario) -> Result<Bundle, CliError> {
    let config = s.system_config()?;
    let setup = s.learning_setup();
    let candidates = CandidateSet::grid_around(
        &config,
        service_types(&config),
        &setup.lambda_factors,
        &setup.mu_factors,
    )?;
    let costs = RelaxedCosts::compute(&candidates, &config)?;
    let cfg = setup.ucb_config(&candidates)?;
    let run = UcbRun {
        episodes: setup.episodes,
        horizon: setup.horizon,
        seed: s.seed,
        benchmark_episodes: setup.benchmark_episodes,
    };
    let rep = run_ucb_whittle(&config, &candidates, &cfg, &costs, &run, None)?;

    let mut ep = Table::new(
        "ucb_episodes",
        &["episode", "selected_candidate_id", "ball_size", "episode_cost", "cumulative_regret"],
    );
    for k in 0..rep.selected.len() {
        ep.push(vec![
            k.into(),
            rep.selected[k].into(),
            rep.ball_sizes[k].into(),
            rep.episodes.episode_costs[k].into(),
            rep.episodes.cumulative_regret[k].into(),
        ]);
    }
    let mut cand = Table::new(
        "candidates",
        &["candidate_id", "service_id", "type", "lambda", "mu", "relaxed_value", "is_truth"],
    );
    for id in 0..candidates.len() {
        for i in 0..candidates.services() {
            let m = candidates.means(id, i);
            cand.push(vec![
                id.into(),
                i.into(),
                candidates.type_of(i).into(),
                (1.0 / m.arrival).into(),
                (1.0 / m.delivery).into(),
                costs.value(id).into(),
                (rep.truth == Some(id)).to_string().into(),
            ]);
        }
    }
    let last = *rep.selected.last().expect("at least one episode");
    let mut tab = Table::new("ucb_table", &TABLE_HEADER);
    for (i, table) in rep.tables_of(last).expect("selected tables are cached").iter().enumerate() {
        push_table(&mut tab, i, table);
    }
    let mut b = Bundle::new("learn-ucb");
    b.tables.extend([ep, cand, tab]);
    b.result("benchmark", rep.benchmark);
    b.result("truth", rep.truth);
    b.result("final_candidate", last);
    b.result("truth_frequency_second_half", rep.truth_frequency(rep.selected.len() / 2));
    b.result("cumulative_regret", rep.episodes.cumulative_regret.last());
    b.meta("radius", "sqrt(K1 / n * (ln N + b ln T - ln delta))");
    b.meta(
        "ucb",
        json!({"delta": cfg.delta, "b": cfg.b, "epsilon": cfg.epsilon, "tau_h": cfg.tau_h, "k1": cfg.k1}),
    );
    b.meta("benchmark", "Monte Carlo episode cost of the true index policy");
    Ok(b)
}

fn iterate_tables(name: &str, learned: &[IndexIterates]) -> (Table, Table) {
    let mut trace = Table::new(&format!("{name}_trace"), &["service_id", "target_state", "episode", "W_iterate"]);
    let mut table = Table::new(&format!("{name}_table"), &TABLE_HEADER);
    for (i, it) in learned.iter().enumerate() {
        for (k, row) in it.history.iter().enumerate() {
            for (state, &w) in row.iter().enumerate() {
                trace.push(vec![i.into(), state.into(), k.into(), w.into()]);
            }
        }
        push_table(&mut table, i, &WhittleTable::learned(it.table.clone()));
    }
    (trace, table)
}

fn learn_q(s: &Scenario, baseline: bool) -> Result<Bundle, CliError> {
    let config = s.system_config()?;
    let (name, learned) = if baseline {
        ("baseline", learn_system_baseline(&config, &s.baseline_options(), s.seed)?)
    } else {
        ("q", learn_system(&config, &s.q_options(), s.seed)?)
    };
    let mut errors = Vec::new();
    for (p, it) in config.services().iter().zip(&learned) {
        let truth = whittle_table(p)?;
        errors.push(svcplace::qlearn::index_errors(&it.table, truth.values(), ERROR_FLOOR));
    }
    let worst: Vec<f64> = errors.iter().map(|e| e.iter().cloned().fold(0.0, f64::max)).collect();
    let (trace, table) = iterate_tables(name, &learned);
    let mut b = Bundle::new(if baseline { "baseline" } else { "learn-q" });
    b.tables.extend([trace, table]);
    b.result("worst_relative_error", worst);
    b.meta("schedules", s.schedules());
    b.meta("relative_error", "|W_learned - W| / max(|W|, 1e-3) per state");
    Ok(b)
}

fn table1(s: &Scenario) -> Result<Bundle, CliError> {
    let dp = s.dp_options();
    let mut t = Table::new(
        "table1",
        &["ratio", "s_max", "optimal_cost", "whittle_cost", "gap_percent", "reference_percent"],
    );
    let mut max_gap = f64::NEG_INFINITY;
    for &s_max in &s.table1.s_max {
        for r in run_table1(s_max, &dp)? {
            max_gap = max_gap.max(r.gap_percent);
            t.push(vec![
                r.ratio.into(),
                r.s_max.into(),
                r.optimal_cost.into(),
                r.whittle_cost.into(),
                r.gap_percent.into(),
                r.reference_percent.into(),
            ]);
        }
    }
    let mut b = Bundle::new("table1");
    b.tables.push(t);
    b.result("max_gap_percent", max_gap);
    b.meta("gap_percent", "100 * (whittle_cost - optimal_cost) / optimal_cost");
    Ok(b)
}

fn switching(s: &Scenario) -> Result<Bundle, CliError> {
    let [r1, r2] = s.switching.ratios;
    let config = switching_config(r1, r2, s.switching.s_max)?;
    let curve = run_switching_curve(&config, &s.dp_options())?;
    let mut t = Table::new("switching_curve", &["s1", "s2", "optimal_served", "whittle_served"]);
    for p in &curve.points {
        t.push(vec![p.s1.into(), p.s2.into(), p.optimal.into(), p.whittle.into()]);
    }
    let mut b = Bundle::new("switching-curve");
    b.tables.push(t);
    b.result("agreement", curve.agreement);
    b.meta("served", "id of the service placed in the state; empty when the slot is idle");
    Ok(b)
}

fn convergence(s: &Scenario) -> Result<Bundle, CliError> {
    let config = s.system_config()?;
    let res = run_convergence(&config, &s.learning_setup(), s.seed)?;
    let mut trace = Table::new("convergence_trace", &["learner", "episode", "state", "W_iterate", "W_true"]);
    let mut summary = Table::new("convergence_summary", &["learner", "episodes_to_tolerance"]);
    for tr in &res.traces {
        for (k, row) in tr.history.iter().enumerate() {
            for (state, &w) in row.iter().enumerate() {
                trace.push(vec![
                    tr.learner.as_str().into(),
                    k.into(),
                    state.into(),
                    w.into(),
                    res.truth.get(state).copied().into(),
                ]);
            }
        }
        summary.push(vec![tr.learner.as_str().into(), tr.episodes_to_tolerance.into()]);
    }
    let mut b = Bundle::new("convergence");
    b.tables.extend([trace, summary]);
    b.result("ucb_selected", &res.selected);
    b.meta("tolerance", CONVERGENCE_TOLERANCE);
    b.meta("error_floor", ERROR_FLOOR);
    b.meta(
        "episodes_to_tolerance",
        "first episode after which every state stays within the relative tolerance",
    );
    Ok(b)
}

fn mse(s: &Scenario) -> Result<Bundle, CliError> {
    let points = run_mse_vs_n(&s.mse.n, &s.learning_setup(), &s.mse_settings(), s.seed)?;
    let mut agg = Table::new("mse_vs_n", &["n", "learner", "mse", "replications"]);
    let mut reps = Table::new("mse_replications", &["n", "learner", "replication", "difference"]);
    for p in &points {
        agg.push(vec![p.n.into(), p.learner.as_str().into(), p.mse.into(), p.differences.len().into()]);
        for (r, &d) in p.differences.iter().enumerate() {
            reps.push(vec![p.n.into(), p.learner.as_str().into(), r.into(), d.into()]);
        }
    }
    let mut b = Bundle::new("mse-vs-n");
    b.tables.extend([agg, reps]);
    b.meta(
        "mse",
        "mean over replications of (c_learned - c_true)^2, c = simulated average cost per service; both policies share the random stream",
    );
    b.meta("system", "N services over five types (lambda 10..30, mu 5), capacity N/2");
    Ok(b)
}
