//! Scenario files: TOML describing the system, the experiment and its knobs.
//!
//! Every section except `[system]` is optional and falls back to the values
//! used in the numerical study. See `docs/scenario.md` for the schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use svcplace::experiments::{LearningSetup, MseSettings};
use svcplace::qlearn::{BaselineOptions, GreedyConvention, QLearnOptions, QMode, RateSchedules};
use svcplace::{DpOptions, ServiceParams, SystemConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Table1,
    SwitchingCurve,
    Convergence,
    MseVsN,
    #[default]
    Custom,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Table1 => "table1",
            ExperimentKind::SwitchingCurve => "switching-curve",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::MseVsN => "mse-vs-n",
            ExperimentKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub lambda: f64,
    pub mu: f64,
    pub s_max: usize,
    /// Number of identical copies.
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub capacity: usize,
    pub services: Vec<ServiceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSpec {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_states: usize,
}

impl Default for DpSpec {
    fn default() -> Self {
        let d = DpOptions::default();
        DpSpec {
            tolerance: d.tolerance,
            max_iterations: d.max_iterations,
            max_states: d.max_states,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    Literal,
    #[default]
    RelativeValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GreedySpec {
    #[default]
    GreedyWithEpsilon,
    ExploreWithEpsilon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    pub tau_alpha: f64,
    pub tau_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningSpec {
    pub episodes: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// Present for decaying step sizes `alpha / (1 + t / tau_alpha)`.
    pub decay: Option<DecaySpec>,
    pub mode: ModeSpec,
    pub epsilon: f64,
    pub greedy: GreedySpec,
    /// Per-transition index step of the baseline; `gamma / horizon` if absent.
    pub index_step: Option<f64>,
    /// Overrides the theorem value of `K1`.
    pub k1: Option<f64>,
    pub lambda_factors: Vec<f64>,
    pub mu_factors: Vec<f64>,
    pub benchmark_episodes: usize,
}

impl Default for LearningSpec {
    fn default() -> Self {
        LearningSpec {
            episodes: 200,
            horizon: 100,
            alpha: 0.01,
            gamma: 0.005,
            decay: None,
            mode: ModeSpec::default(),
            epsilon: 0.5,
            greedy: GreedySpec::default(),
            index_step: None,
            k1: None,
            lambda_factors: vec![2.0 / 3.0, 1.0, 1.5],
            mu_factors: vec![2.0 / 3.0, 1.0, 1.5],
            benchmark_episodes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Table1Spec {
    pub s_max: Vec<usize>,
}

impl Default for Table1Spec {
    fn default() -> Self {
        Table1Spec {
            s_max: vec![10, 15, 20, 30, 40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwitchingSpec {
    pub ratios: [f64; 2],
    pub s_max: usize,
}

impl Default for SwitchingSpec {
    fn default() -> Self {
        SwitchingSpec {
            ratios: [4.0, 6.0],
            s_max: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MseSpec {
    pub n: Vec<usize>,
    pub s_max: usize,
    pub eval_events_per_service: u64,
}

impl Default for MseSpec {
    fn default() -> Self {
        let d = MseSettings::default();
        MseSpec {
            n: vec![10, 20, 30, 40, 50],
            s_max: d.s_max,
            eval_events_per_service: d.eval_events_per_service,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySpec {
    #[default]
    Whittle,
    Optimal,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub events: u64,
    pub policy: PolicySpec,
    pub track_latency: bool,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        SimulateSpec {
            events: 1_000_000,
            policy: PolicySpec::default(),
            track_latency: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "ten")]
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub dp: DpSpec,
    #[serde(default)]
    pub learning: LearningSpec,
    #[serde(default)]
    pub table1: Table1Spec,
    #[serde(default)]
    pub switching: SwitchingSpec,
    #[serde(default)]
    pub mse: MseSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
}

fn ten() -> usize {
    10
}

/// Two identical services (`lambda = 10`, `mu = 5`, `s_max = 5`) sharing one
/// slot: the setting of the learning experiments.
fn learning_system() -> SystemSpec {
    SystemSpec {
        capacity: 1,
        services: vec![ServiceSpec {
            lambda: 10.0,
            mu: 5.0,
            s_max: 5,
            count: 2,
        }],
    }
}

impl Scenario {
    /// Built-in scenario used when no `--config` is given.
    pub fn builtin(kind: ExperimentKind, seed: u64) -> Self {
        Scenario {
            experiment: kind,
            seed,
            replications: 10,
            output: None,
            system: Some(learning_system()),
            dp: DpSpec::default(),
            learning: LearningSpec::default(),
            table1: Table1Spec::default(),
            switching: SwitchingSpec::default(),
            mse: MseSpec::default(),
            simulate: SimulateSpec::default(),
        }
    }

    /// Canonical TOML text; parsing it back yields an equal scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn system_config(&self) -> Result<SystemConfig, CliError> {
        let spec = self
            .system
            .as_ref()
            .ok_or_else(|| CliError::Config("missing section `system`".to_string()))?;
        let mut services = Vec::new();
        for (k, s) in spec.services.iter().enumerate() {
            let p = ServiceParams::new(s.lambda, s.mu, s.s_max)
                .map_err(|e| CliError::Config(format!("system.services[{k}]: {e}")))?;
            services.extend(std::iter::repeat_n(p, s.count));
        }
        SystemConfig::new(services, spec.capacity).map_err(|e| CliError::Config(format!("system: {e}")))
    }

    pub fn dp_options(&self) -> DpOptions {
        DpOptions {
            tolerance: self.dp.tolerance,
            max_iterations: self.dp.max_iterations,
            max_states: self.dp.max_states,
        }
    }

    pub fn schedules(&self) -> RateSchedules {
        let l = &self.learning;
        match &l.decay {
            None => RateSchedules::Constant {
                alpha: l.alpha,
                gamma: l.gamma,
            },
            Some(d) => RateSchedules::Decaying {
                a0: l.alpha,
                tau_alpha: d.tau_alpha,
                g0: l.gamma,
                tau_gamma: d.tau_gamma,
            },
        }
    }

    pub fn q_options(&self) -> QLearnOptions {
        let l = &self.learning;
        QLearnOptions {
            episodes: l.episodes,
            horizon: l.horizon,
            schedules: self.schedules(),
            mode: match l.mode {
                ModeSpec::Literal => QMode::Literal,
                ModeSpec::RelativeValue => QMode::RelativeValue,
            },
            warm_start: None,
        }
    }

    pub fn baseline_options(&self) -> BaselineOptions {
        let l = &self.learning;
        BaselineOptions {
            learn: self.q_options(),
            epsilon: l.epsilon,
            convention: match l.greedy {
                GreedySpec::GreedyWithEpsilon => GreedyConvention::GreedyWithEpsilon,
                GreedySpec::ExploreWithEpsilon => GreedyConvention::ExploreWithEpsilon,
            },
            index_step: l.index_step,
        }
    }

    pub fn learning_setup(&self) -> LearningSetup {
        let l = &self.learning;
        LearningSetup {
            episodes: l.episodes,
            horizon: l.horizon,
            q: self.q_options(),
            baseline: self.baseline_options(),
            ucb_k1: l.k1,
            lambda_factors: l.lambda_factors.clone(),
            mu_factors: l.mu_factors.clone(),
            benchmark_episodes: l.benchmark_episodes,
        }
    }

    pub fn mse_settings(&self) -> MseSettings {
        MseSettings {
            s_max: self.mse.s_max,
            replications: self.replications,
            eval_events_per_service: self.mse.eval_events_per_service,
        }
    }

    /// Checks ranges the type system cannot express. Errors name the field.
    pub fn validate(&self, source: Option<&str>) -> Result<(), CliError> {
        let fail = |field: &str, reason: &str| {
            let key = field.rsplit('.').next().unwrap_or(field);
            let at = source
                .and_then(|s| line_of(s, key))
                .map(|l| format!(" (line {l})"))
                .unwrap_or_default();
            Err(CliError::Config(format!("field `{field}`{at}: {reason}")))
        };
        if let Some(sys) = &self.system {
            if sys.services.is_empty() {
                return fail("system.services", "needs at least one service");
            }
            if sys.services.iter().any(|s| s.count == 0) {
                return fail("system.services.count", "must be at least 1");
            }
            self.system_config()?;
        }
        if self.replications == 0 {
            return fail("replications", "must be at least 1");
        }
        let l = &self.learning;
        if l.episodes == 0 {
            return fail("learning.episodes", "must be at least 1");
        }
        if l.horizon == 0 {
            return fail("learning.horizon", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&l.alpha) {
            return fail("learning.alpha", "must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&l.gamma) {
            return fail("learning.gamma", "must lie in [0, 1]");
        }
        if let Some(d) = &l.decay {
            if !(d.tau_alpha > 0.0 && d.tau_gamma > 0.0) {
                return fail("learning.decay", "time constants must be positive");
            }
        }
        if !(l.epsilon > 0.0 && l.epsilon <= 1.0) {
            return fail("learning.epsilon", "must lie in (0, 1]");
        }
        if l.k1.is_some_and(|k| !(k > 0.0 && k.is_finite())) {
            return fail("learning.k1", "must be positive");
        }
        if l.lambda_factors.is_empty() || l.lambda_factors.iter().any(|&f| !positive(f)) {
            return fail("learning.lambda_factors", "needs positive multipliers");
        }
        if l.mu_factors.is_empty() || l.mu_factors.iter().any(|&f| !positive(f)) {
            return fail("learning.mu_factors", "needs positive multipliers");
        }
        if l.benchmark_episodes == 0 {
            return fail("learning.benchmark_episodes", "must be at least 1");
        }
        if self.table1.s_max.iter().any(|&s| s < 2) {
            return fail("table1.s_max", "truncation must be at least 2");
        }
        if self.switching.s_max < 2 || self.switching.ratios.iter().any(|&r| !positive(r)) {
            return fail("switching", "needs positive ratios and s_max >= 2");
        }
        if self.mse.n.iter().any(|&n| n < 5) {
            return fail("mse.n", "every N needs at least one service per type (N >= 5)");
        }
        if self.mse.s_max < 2 {
            return fail("mse.s_max", "must be at least 2");
        }
        if self.simulate.events == 0 {
            return fail("simulate.events", "must be at least 1");
        }
        Ok(())
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

fn line_of(source: &str, key: &str) -> Option<usize> {
    source
        .lines()
        .position(|l| {
            let t = l.trim_start();
            t.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='))
                || t == format!("[{key}]")
        })
        .map(|i| i + 1)
}

/// Parses and validates scenario text.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, CliError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    scenario.validate(Some(text))?;
    Ok(scenario)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario_str(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}
