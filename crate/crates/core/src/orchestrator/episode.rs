use std::time::Duration;

use super::executor::{actor_env, assemble_input};
use super::hitl::{hitl_ask, HitlChannel};
use super::policy::{DecideError, Decider, Policy};
use super::render::render_previous_step;
use crate::actors::harness::Harness;
use crate::actors::{run_actor, ActorRegistry};
use crate::llm::{CallBudget, ChatBackend, Gateway, PromptSet, DEFAULT_CALL_BUDGET};
use crate::log::{Clock, EventSink, LogRecord};
use crate::model::{
    episode_succeeded, CallType, EpisodeResult, EpisodeStatus, ShortTermMemory, StepOutcome, StepRecord, StepTarget,
    TopologyGraph,
};
use crate::taskio::{write_artifacts, ArtifactManifest, TaskSpec};

#[derive(Debug, Clone)]
pub struct EpisodeOptions {
    pub episode_id: String,
    pub run_label: String,
    pub max_iterations: usize,
    pub call_budget: u32,
    /// Extra tries on a retriable backend error, per chat call.
    pub backend_retries: u32,
    pub backoff: Duration,
    pub write_artifacts: bool,
}

impl EpisodeOptions {
    pub fn for_task(task: &TaskSpec) -> Self {
        Self {
            episode_id: task.id.clone(),
            run_label: task.id.clone(),
            max_iterations: task.max_iterations(),
            call_budget: task.run.planner.max_chat_calls.unwrap_or(DEFAULT_CALL_BUDGET),
            backend_retries: 2,
            backoff: Duration::from_millis(500),
            write_artifacts: true,
        }
    }
}

/// Everything an episode touches.
pub struct EpisodeEnv<'a> {
    pub task: &'a TaskSpec,
    pub graph: &'a TopologyGraph,
    pub registry: &'a ActorRegistry,
    pub prompts: &'a PromptSet,
    pub backend: &'a mut dyn ChatBackend,
    pub harness: &'a mut dyn Harness,
    pub hitl: &'a mut dyn HitlChannel,
    pub sink: &'a mut dyn EventSink,
    pub clock: &'a dyn Clock,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub memory: ShortTermMemory,
    pub manifest: Option<ArtifactManifest>,
}

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    /// Backend, harness or filesystem failure; carries what was done so far.
    #[error("episode `{}` stopped: {cause}", run.result.run_label)]
    Hard { cause: String, run: Box<EpisodeRun> },
}

impl EpisodeError {
    pub fn run(&self) -> &EpisodeRun {
        match self {
            Self::Hard { run, .. } => run,
        }
    }
}

enum Stop {
    Status(EpisodeStatus),
    Hard(String),
}

pub fn run_episode(env: EpisodeEnv<'_>, policy: Policy, options: &EpisodeOptions) -> Result<EpisodeRun, EpisodeError> {
    let EpisodeEnv {
        task,
        graph,
        registry,
        prompts,
        backend,
        harness,
        hitl,
        sink,
        clock,
    } = env;
    let policy_label = policy.label().to_owned();
    let seed = policy.seed();
    sink.emit(&LogRecord::EpisodeStart {
        episode_id: options.episode_id.clone(),
        run_label: options.run_label.clone(),
        task: task.id.clone(),
        policy: policy_label.clone(),
        seed,
        max_iterations: options.max_iterations,
        graph: graph.clone(),
    });

    let required_functions = task.required_functions();
    let script_name = task.script_name();
    let mut decider = Decider::new(policy);
    let mut budget = CallBudget::new(options.call_budget);
    let mut memory = ShortTermMemory::new();

    let stop = loop {
        if !memory.is_empty() && episode_succeeded(graph, memory.actor_status()) {
            break Stop::Status(EpisodeStatus::Success);
        }
        if memory.len() >= options.max_iterations {
            break Stop::Status(EpisodeStatus::ExhaustedIterations);
        }

        let previous_step = render_previous_step(&memory);
        let decided = {
            let mut gateway = Gateway {
                backend: &mut *backend,
                sink: &mut *sink,
                budget: &mut budget,
                retries: options.backend_retries,
                backoff: options.backoff,
            };
            decider.decide(graph, &memory, prompts, &mut gateway)
        };
        let decision = match decided {
            Ok(d) => d,
            Err(e @ (DecideError::PlannerAbort { .. } | DecideError::PolicyExhausted)) => {
                sink.emit(&LogRecord::Warning { message: e.to_string() });
                break Stop::Status(EpisodeStatus::PlannerAbort);
            }
            Err(e) => break Stop::Hard(e.to_string()),
        };
        for message in &decision.warnings {
            sink.emit(&LogRecord::Warning {
                message: message.clone(),
            });
        }
        sink.emit(&LogRecord::Decision {
            step: memory.len(),
            decided_by: decision.decided_by,
            previous_step: previous_step.clone(),
            call_type: decision.call_type,
            target: decision.target.clone(),
            reason: decision.reason.clone(),
            planner_input: decision.planner_input.clone(),
        });

        let outcome = match &decision.target {
            StepTarget::Hitl => match hitl_ask(&mut *hitl, &decision.planner_input, &previous_step) {
                Ok(answered) => {
                    if let Some(reason) = answered.fallback {
                        sink.emit(&LogRecord::Warning {
                            message: format!("hitl fell back to the default answer: {reason}"),
                        });
                    }
                    StepOutcome::Hitl(answered.exchange)
                }
                Err(e) => break Stop::Hard(e.to_string()),
            },
            StepTarget::Actor(name) => {
                let Some(spec) = registry.get(name) else {
                    break Stop::Hard(format!("no spec registered for actor `{name}`"));
                };
                let template = match prompts.get(&spec.template) {
                    Ok(t) => t,
                    Err(e) => break Stop::Hard(e.to_string()),
                };
                let input = assemble_input(spec, task, &memory, &decision.planner_input);
                let actor_env = actor_env(task, &memory, &required_functions, &script_name);
                let mut gateway = Gateway {
                    backend: &mut *backend,
                    sink: &mut *sink,
                    budget: &mut budget,
                    retries: options.backend_retries,
                    backoff: options.backoff,
                };
                match run_actor(spec, template, &input, &actor_env, &mut gateway, &mut *harness) {
                    Ok(outcome) => StepOutcome::Actor(outcome),
                    Err(e) => break Stop::Hard(e.to_string()),
                }
            }
        };

        let step = StepRecord {
            index: memory.len(),
            decided_by: decision.decided_by,
            call_type: match decision.target {
                StepTarget::Hitl => CallType::Tool,
                StepTarget::Actor(_) => CallType::Actor,
            },
            target: decision.target,
            planner_input: decision.planner_input,
            outcome,
            timestamp: clock.now(),
        };
        if let Err(e) = memory.append(step.clone()) {
            break Stop::Hard(e.to_string());
        }
        sink.emit(&LogRecord::Step(step));
    };

    let (status, mut cause) = match stop {
        Stop::Status(s) => (s, None),
        Stop::Hard(c) => (EpisodeStatus::HardError, Some(c)),
    };
    let manifest = if options.write_artifacts {
        match write_artifacts(task, &memory) {
            Ok(m) => Some(m),
            Err(e) => {
                cause.get_or_insert_with(|| e.to_string());
                None
            }
        }
    } else {
        None
    };
    let status = if cause.is_some() { EpisodeStatus::HardError } else { status };
    let (per_actor, hitl_exchanges) = EpisodeResult::tallies(memory.steps());
    let result = EpisodeResult {
        status,
        total_steps: memory.len(),
        per_actor,
        hitl_exchanges,
        seed,
        run_label: options.run_label.clone(),
        task: task.id.clone(),
        policy: policy_label,
        final_status: memory.actor_status().clone(),
    };
    if let Some(cause) = &cause {
        sink.emit(&LogRecord::Warning {
            message: format!("hard error: {cause}"),
        });
    }
    sink.emit(&LogRecord::EpisodeEnd(result.clone()));
    tracing::info!(task = %task.id, status = ?result.status, steps = result.total_steps, "episode finished");

    let run = EpisodeRun {
        result,
        memory,
        manifest,
    };
    match cause {
        Some(cause) => Err(EpisodeError::Hard {
            cause,
            run: Box::new(run),
        }),
        None => Ok(run),
    }
}
