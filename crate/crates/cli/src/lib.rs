//! Command-line front end: scenario parsing, experiment dispatch and result
//! bundles.

pub mod bundle;
pub mod commands;
pub mod scenario;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use bundle::{Bundle, Format, Table};
pub use scenario::{parse_scenario, parse_scenario_str, ExperimentKind, PolicySpec, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration, 3 for state or iteration budgets, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Budget(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<svcplace::Error> for CliError {
    fn from(e: svcplace::Error) -> Self {
        use svcplace::Error as E;
        match e {
            E::BudgetExceeded { .. } | E::NoConvergence { .. } => CliError::Budget(e.to_string()),
            E::InvalidParameter { .. } | E::ThresholdOutOfRange { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "svcplace", version, about = "Index policies for placing services on a capacity-limited edge server")]
pub struct Cli {
    /// Scenario file (TOML). Built-in defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to the scenario `output` or `out/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Index table of every service.
    WhittleTable,
    /// Optimal policy by value iteration, compared with the index policy.
    Optimal,
    /// Simulates a placement policy.
    Simulate(SimulateArgs),
    /// UCB-Whittle on the scenario system.
    LearnUcb(LearnArgs),
    /// Q-learning of the index of every service.
    LearnQ(LearnArgs),
    /// Epsilon-greedy Q-learning baseline.
    Baseline(LearnArgs),
    /// Cost gap of the index policy on symmetric two-service systems.
    Table1(Table1Args),
    /// Optimal and index switching curves of a two-service system.
    SwitchingCurve,
    /// Index convergence of the three learners.
    Convergence(LearnArgs),
    /// Mean squared cost difference against the true index policy, by N.
    MseVsN(MseArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::WhittleTable => "whittle-table",
            Command::Optimal => "optimal",
            Command::Simulate(_) => "simulate",
            Command::LearnUcb(_) => "learn-ucb",
            Command::LearnQ(_) => "learn-q",
            Command::Baseline(_) => "baseline",
            Command::Table1(_) => "table1",
            Command::SwitchingCurve => "switching-curve",
            Command::Convergence(_) => "convergence",
            Command::MseVsN(_) => "mse-vs-n",
        }
    }

    fn experiment(&self) -> ExperimentKind {
        match self {
            Command::Table1(_) => ExperimentKind::Table1,
            Command::SwitchingCurve => ExperimentKind::SwitchingCurve,
            Command::Convergence(_) => ExperimentKind::Convergence,
            Command::MseVsN(_) => ExperimentKind::MseVsN,
            _ => ExperimentKind::Custom,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub events: Option<u64>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PolicyArg {
    Whittle,
    Optimal,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
}

impl LearnArgs {
    fn apply(&self, s: &mut Scenario) {
        if let Some(e) = self.episodes {
            s.learning.episodes = e;
        }
        if let Some(h) = self.horizon {
            s.learning.horizon = h;
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Table1Args {
    /// Truncation levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub s_max: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct MseArgs {
    /// System sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    #[command(flatten)]
    pub learn: LearnArgs,
}

/// Loads the scenario and applies command-line overrides.
pub fn resolve_scenario(cli: &Cli) -> Result<Scenario, CliError> {
    let kind = cli.command.experiment();
    let mut s = match &cli.config {
        Some(path) => parse_scenario(path)?,
        None => Scenario::builtin(kind, 0),
    };
    if kind != ExperimentKind::Custom && s.experiment != kind && s.experiment != ExperimentKind::Custom {
        return Err(CliError::Config(format!(
            "scenario is for experiment `{}`, not `{}`",
            s.experiment.name(),
            kind.name()
        )));
    }
    if kind != ExperimentKind::Custom {
        s.experiment = kind;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(e) = a.events {
                s.simulate.events = e;
            }
            if let Some(p) = a.policy {
                s.simulate.policy = match p {
                    PolicyArg::Whittle => PolicySpec::Whittle,
                    PolicyArg::Optimal => PolicySpec::Optimal,
                    PolicyArg::Random => PolicySpec::Random,
                };
            }
        }
        Command::LearnUcb(a) | Command::LearnQ(a) | Command::Baseline(a) | Command::Convergence(a) => {
            a.apply(&mut s);
        }
        Command::Table1(a) => {
            if let Some(v) = &a.s_max {
                s.table1.s_max = v.clone();
            }
        }
        Command::MseVsN(a) => {
            if let Some(v) = &a.n {
                s.mse.n = v.clone();
            }
            a.learn.apply(&mut s);
        }
        _ => {}
    }
    s.validate(None)?;
    Ok(s)
}

/// Runs one invocation and returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("`--threads` must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let scenario = resolve_scenario(cli)?;
    let bundle = commands::execute(&cli.command, &scenario)?;
    let dir = cli
        .out
        .clone()
        .or_else(|| scenario.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(cli.command.name()));
    bundle.write(&dir, cli.format, &scenario)
}
