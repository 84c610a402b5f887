//! Re-derives an episode from its log and checks it against the topology.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actors::DEFAULT_MAX_RETRIES;
use crate::log::LogRecord;
use crate::model::{
    episode_succeeded, legal_next, ActorName, EpisodeResult, EpisodeStatus, ShortTermMemory, StepTarget, Tally,
    TopologyGraph,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    IllegalTransition,
    AttemptsExceeded,
    TerminatedSuccess,
    MalformedStep,
    DecisionMismatch,
    ReplayMismatch,
    TallyMismatch,
    StepsOverCap,
    FalseSuccess,
    MissingStart,
    MissingEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeReplay {
    pub episode_id: String,
    pub task: String,
    pub policy: String,
    pub steps: usize,
    pub max_attempts: u32,
    pub per_actor: BTreeMap<ActorName, Tally>,
    pub hitl_exchanges: usize,
    pub final_status: BTreeMap<ActorName, bool>,
    pub recorded: Option<EpisodeResult>,
    pub violations: Vec<Violation>,
}

impl EpisodeReplay {
    pub fn illegal_transitions(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| v.kind == ViolationKind::IllegalTransition)
            .count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episodes: Vec<EpisodeReplay>,
    /// Violations found outside any episode.
    pub stray: Vec<Violation>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.stray.is_empty() && self.episodes.iter().all(|e| e.violations.is_empty())
    }

    pub fn violation_count(&self) -> usize {
        self.stray.len() + self.episodes.iter().map(|e| e.violations.len()).sum::<usize>()
    }

    pub fn illegal_transitions(&self) -> usize {
        self.episodes.iter().map(EpisodeReplay::illegal_transitions).sum()
    }

    /// Results re-derived from the steps, in log order.
    pub fn derived_results(&self) -> Vec<EpisodeResult> {
        self.episodes
            .iter()
            .filter_map(|e| {
                let recorded = e.recorded.as_ref()?;
                Some(EpisodeResult {
                    per_actor: e.per_actor.clone(),
                    hitl_exchanges: e.hitl_exchanges,
                    total_steps: e.steps,
                    final_status: e.final_status.clone(),
                    ..recorded.clone()
                })
            })
            .collect()
    }
}

struct Open {
    replay: EpisodeReplay,
    graph: TopologyGraph,
    max_iterations: usize,
    memory: ShortTermMemory,
    pending_decision: Option<(usize, StepTarget)>,
}

impl Open {
    fn flag(&mut self, kind: ViolationKind, step: Option<usize>, message: String) {
        self.replay.violations.push(Violation { kind, step, message });
    }

    fn close(mut self, end: Option<&EpisodeResult>) -> EpisodeReplay {
        let (per_actor, hitl) = EpisodeResult::tallies(self.memory.steps());
        self.replay.steps = self.memory.len();
        self.replay.per_actor = per_actor;
        self.replay.hitl_exchanges = hitl;
        self.replay.final_status = self.memory.actor_status().clone();
        let Some(end) = end else {
            self.flag(ViolationKind::MissingEnd, None, "log ends without an episode_end record".into());
            return self.replay;
        };
        if end.final_status != self.replay.final_status {
            self.flag(
                ViolationKind::ReplayMismatch,
                None,
                format!("recorded final status {:?} differs from the fold {:?}", end.final_status, self.replay.final_status),
            );
        }
        if end.per_actor != self.replay.per_actor
            || end.hitl_exchanges != self.replay.hitl_exchanges
            || end.total_steps != self.replay.steps
        {
            self.flag(ViolationKind::TallyMismatch, None, "recorded tallies differ from the steps".into());
        }
        if end.total_steps > self.max_iterations {
            self.flag(
                ViolationKind::StepsOverCap,
                None,
                format!("{} steps exceed the cap of {}", end.total_steps, self.max_iterations),
            );
        }
        if end.status == EpisodeStatus::Success && !episode_succeeded(&self.graph, self.memory.actor_status()) {
            self.flag(ViolationKind::FalseSuccess, None, "success recorded but the success condition does not hold".into());
        }
        self.replay.recorded = Some(end.clone());
        self.replay
    }
}

/// Folds every episode in `records` and reports what does not add up.
pub fn replay(records: &[LogRecord]) -> ReplayReport {
    let mut report = ReplayReport::default();
    let mut open: Option<Open> = None;
    for record in records {
        match record {
            LogRecord::EpisodeStart {
                episode_id,
                task,
                policy,
                max_iterations,
                graph,
                ..
            } => {
                if let Some(prev) = open.take() {
                    report.episodes.push(prev.close(None));
                }
                open = Some(Open {
                    replay: EpisodeReplay {
                        episode_id: episode_id.clone(),
                        task: task.clone(),
                        policy: policy.clone(),
                        steps: 0,
                        max_attempts: 0,
                        per_actor: BTreeMap::new(),
                        hitl_exchanges: 0,
                        final_status: BTreeMap::new(),
                        recorded: None,
                        violations: Vec::new(),
                    },
                    graph: graph.clone(),
                    max_iterations: *max_iterations,
                    memory: ShortTermMemory::new(),
                    pending_decision: None,
                });
            }
            LogRecord::Decision { step, target, .. } => {
                if let Some(ep) = open.as_mut() {
                    ep.pending_decision = Some((*step, target.clone()));
                }
            }
            LogRecord::Step(step) => {
                let Some(ep) = open.as_mut() else {
                    report.stray.push(Violation {
                        kind: ViolationKind::MissingStart,
                        step: Some(step.index),
                        message: "step outside an episode".into(),
                    });
                    continue;
                };
                let legal = legal_next(&ep.graph, &ep.memory);
                if !legal.allows(&step.target) {
                    let message = format!("`{}` is not in {}", step.target, legal.describe());
                    ep.flag(ViolationKind::IllegalTransition, Some(step.index), message);
                }
                match ep.pending_decision.take() {
                    Some((i, t)) if i == step.index && t == step.target => {}
                    other => {
                        let message = format!("decision {other:?} does not match step target `{}`", step.target);
                        ep.flag(ViolationKind::DecisionMismatch, Some(step.index), message);
                    }
                }
                if let Some((_, outcome)) = step.actor_outcome() {
                    ep.replay.max_attempts = ep.replay.max_attempts.max(outcome.attempts);
                    if outcome.attempts > DEFAULT_MAX_RETRIES {
                        let message = format!("{} attempts", outcome.attempts);
                        ep.flag(ViolationKind::AttemptsExceeded, Some(step.index), message);
                    }
                    if outcome.terminated && outcome.success {
                        ep.flag(ViolationKind::TerminatedSuccess, Some(step.index), "terminated outcome marked successful".into());
                    }
                }
                if let Err(e) = ep.memory.append(step.clone()) {
                    ep.flag(ViolationKind::MalformedStep, Some(step.index), e.to_string());
                }
            }
            LogRecord::EpisodeEnd(result) => match open.take() {
                Some(ep) => report.episodes.push(ep.close(Some(result))),
                None => report.stray.push(Violation {
                    kind: ViolationKind::MissingStart,
                    step: None,
                    message: "episode_end without episode_start".into(),
                }),
            },
            LogRecord::Chat { .. } | LogRecord::Warning { .. } => {}
        }
    }
    if let Some(ep) = open.take() {
        report.episodes.push(ep.close(None));
    }
    report
}
