use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decision::{parse_decision, truncate_words, MAX_PLANNER_INPUT_WORDS};
use super::render::{render_actor_status, render_previous_step, render_transitions};
use crate::llm::{bindings, Chat, ChatRequest, LlmError, PromptSet, TemplateError};
use crate::model::{legal_next, names, ActorName, CallType, DecidedBy, ShortTermMemory, StepTarget, TopologyGraph};

/// Re-asks after the first malformed or illegal planner reply.
pub const MAX_REASKS: usize = 2;

pub const PLANNER_TAG: &str = "planner";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    Planner,
    Sequential { order: Vec<ActorName> },
    Random { seed: u64 },
}

impl Policy {
    pub fn sequential_default() -> Self {
        Self::Sequential {
            order: names::DEFAULT_ORDER.iter().map(|&a| a.into()).collect(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Planner => "planner",
            Self::Sequential { .. } => "sequential",
            Self::Random { .. } => "random",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Random { seed } => Some(*seed),
            _ => None,
        }
    }

    /// A sequential order must start at the entry and follow transitions.
    pub fn validate(&self, graph: &TopologyGraph) -> Result<(), PolicyError> {
        let Self::Sequential { order } = self else {
            return Ok(());
        };
        let Some(first) = order.first() else {
            return Err(PolicyError::IllegalOrder("empty order".into()));
        };
        if *first != graph.entry {
            return Err(PolicyError::IllegalOrder(format!("order must start at `{}`", graph.entry)));
        }
        for pair in order.windows(2) {
            if !graph.successors(&pair[0]).contains(&pair[1]) {
                return Err(PolicyError::IllegalOrder(format!("`{}` cannot follow `{}`", pair[1], pair[0])));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("illegal sequential order: {0}")]
    IllegalOrder(String),
}

/// One chosen step, before it runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub decided_by: DecidedBy,
    pub call_type: CallType,
    pub target: StepTarget,
    pub reason: String,
    pub planner_input: String,
    /// Rejected planner replies and input truncation notes.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecideError {
    #[error("planner gave no usable decision after {attempts} tries: {last}")]
    PlannerAbort { attempts: usize, last: String },
    #[error("policy has no further legal step")]
    PolicyExhausted,
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Policy plus its per-episode state.
pub struct Decider {
    policy: Policy,
    cursor: usize,
    rng: Option<ChaCha8Rng>,
}

impl Decider {
    pub fn new(policy: Policy) -> Self {
        let rng = policy.seed().map(ChaCha8Rng::seed_from_u64);
        Self { policy, cursor: 0, rng }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn decide(
        &mut self,
        graph: &TopologyGraph,
        memory: &ShortTermMemory,
        prompts: &PromptSet,
        chat: &mut dyn Chat,
    ) -> Result<Decision, DecideError> {
        let legal = legal_next(graph, memory);
        match &self.policy {
            Policy::Sequential { order } => {
                let next = order.get(self.cursor).ok_or(DecideError::PolicyExhausted)?.clone();
                if !legal.actors.contains(&next) {
                    return Err(DecideError::PolicyExhausted);
                }
                self.cursor += 1;
                Ok(Decision {
                    decided_by: DecidedBy::Sequential,
                    call_type: CallType::Actor,
                    target: StepTarget::Actor(next),
                    reason: "next actor in the fixed order".into(),
                    planner_input: String::new(),
                    warnings: Vec::new(),
                })
            }
            Policy::Random { .. } => {
                let rng = self.rng.as_mut().expect("random policy has a generator");
                let next = legal.actors.choose(rng).ok_or(DecideError::PolicyExhausted)?.clone();
                Ok(Decision {
                    decided_by: DecidedBy::Random,
                    call_type: CallType::Actor,
                    target: StepTarget::Actor(next),
                    reason: format!("uniform draw from {}", legal.describe()),
                    planner_input: String::new(),
                    warnings: Vec::new(),
                })
            }
            Policy::Planner => planner_decide(graph, memory, prompts, chat),
        }
    }
}

fn planner_decide(
    graph: &TopologyGraph,
    memory: &ShortTermMemory,
    prompts: &PromptSet,
    chat: &mut dyn Chat,
) -> Result<Decision, DecideError> {
    let legal = legal_next(graph, memory);
    let template = prompts.get(PLANNER_TAG).map_err(|e| DecideError::PlannerAbort {
        attempts: 0,
        last: e.to_string(),
    })?;
    let base = template.render(&bindings([
        ("transitions", render_transitions(graph)),
        ("actors_status", render_actor_status(graph, memory)),
        ("previous_step", render_previous_step(memory)),
    ]))?;

    let mut violations: Vec<String> = Vec::new();
    for attempt in 0..=MAX_REASKS {
        let mut prompt = base.clone();
        if !violations.is_empty() {
            prompt.push_str("\n\nYOUR PREVIOUS OUTPUT WAS REJECTED:\n");
            for v in &violations {
                prompt.push_str(&format!("- {v}\n"));
            }
            prompt.push_str("Respond again following the OUTPUT_FORMAT.\n");
        }
        let reply = chat.chat(ChatRequest::new(PLANNER_TAG, prompt))?;
        let violation = match parse_decision(&reply) {
            Ok(decision) => {
                let target = decision.target();
                if legal.allows(&target) {
                    let (planner_input, original) = truncate_words(&decision.args.planner_input, MAX_PLANNER_INPUT_WORDS);
                    let mut warnings: Vec<String> =
                        violations.iter().map(|v| format!("planner output rejected: {v}")).collect();
                    if let Some(words) = original {
                        warnings.push(format!("planner_input had {words} words; truncated to {MAX_PLANNER_INPUT_WORDS}"));
                    }
                    return Ok(Decision {
                        decided_by: DecidedBy::Planner,
                        call_type: decision.call_type,
                        target,
                        reason: decision.reason,
                        planner_input,
                        warnings,
                    });
                }
                format!("`{}` is not a legal next step; choose one of: {}", decision.actor, legal.describe())
            }
            Err(e) => e.to_string(),
        };
        tracing::debug!(attempt, %violation, "planner output rejected");
        violations.push(violation);
    }
    Err(DecideError::PlannerAbort {
        attempts: MAX_REASKS + 1,
        last: violations.pop().unwrap_or_default(),
    })
}
