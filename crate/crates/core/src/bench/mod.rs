//! Benchmark protocol, metrics and the policy simulator.

mod metrics;
mod report;
mod run;
mod sim;

pub use metrics::{actor_failure_rate, pass_at_k, planner_steps, rate, ActorRate, ArityError, FailureRates, MeanStd, PassAtK};
pub use report::{BenchReport, PolicyReport};
pub use run::{discover_tasks, run_bench, BenchOptions, RUN_FILE};
pub use sim::{simulate_episodes, simulate_policies, SimConfig, SimOptions, SimPolicy, SimulatedActorModel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bench configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("bench configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Arity(#[from] ArityError),
    #[error("report does not match the episode logs: {0}")]
    SelfCheck(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for BenchError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.0)
    }
}
