use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("threshold {threshold} is outside 0..={max} (s_max = {s_max})")]
    ThresholdOutOfRange {
        threshold: usize,
        max: usize,
        s_max: usize,
    },

    #[error("index denominator {denominator:e} at threshold {threshold} is below the numerical floor")]
    DegenerateDenominator { threshold: usize, denominator: f64 },

    #[error("joint state space has {states} states, budget is {budget}")]
    BudgetExceeded { states: usize, budget: usize },

    #[error("no convergence after {iterations} iterations (last span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },

    #[error("policy-induced chain is reducible; closed classes: {classes:?}")]
    ReducibleChain { classes: Vec<Vec<Vec<usize>>> },

    #[error("dead state {state:?}: total event rate is zero")]
    DeadState { state: Vec<usize> },

    #[error("episode {episode}: learner activated {active} services, capacity is {capacity}")]
    Protocol {
        episode: usize,
        active: usize,
        capacity: usize,
    },

    #[error("threshold {threshold} prescribes active={expected} at state {state}, got active={got}")]
    ThresholdContract {
        threshold: usize,
        state: usize,
        expected: bool,
        got: bool,
    },
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
