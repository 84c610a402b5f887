//! Domain types shared by every part of the engine: the actor topology,
//! per-episode short-term memory and the records an episode leaves behind.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Well-known actor names of the featurization workflow.
pub mod names {
    pub const CONFIG_GENERATOR: &str = "config_generator";
    pub const UTILS_RETRIEVER: &str = "utils_retriever";
    pub const CODE_TEMPLATE_GENERATOR: &str = "code_template_generator";
    pub const TESTCASE_GENERATOR: &str = "testcase_generator";
    pub const CODE_GENERATOR: &str = "code_generator";
    pub const TESTCASE_CODER: &str = "testcase_coder";
    /// Listed in the planner prompt but not part of the default topology.
    pub const FEATURE_SELECTOR: &str = "feature_selector";
    /// Reserved target name for the human-in-the-loop tool.
    pub const HITL: &str = "hitl";

    /// Default sequential order; a legal path through the default topology.
    pub const DEFAULT_ORDER: [&str; 6] = [
        CONFIG_GENERATOR,
        UTILS_RETRIEVER,
        CODE_TEMPLATE_GENERATOR,
        TESTCASE_GENERATOR,
        CODE_GENERATOR,
        TESTCASE_CODER,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActorName(String);

impl ActorName {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActorName {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl PartialEq<str> for ActorName {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for ActorName {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// A transition gate: `actor` may only be entered once `requires` has a
/// latest status of success.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub actor: ActorName,
    pub requires: ActorName,
}

/// The environment graph: actors as nodes, permitted transitions as edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub actors: BTreeSet<ActorName>,
    pub transitions: BTreeMap<ActorName, Vec<ActorName>>,
    pub entry: ActorName,
    pub terminal_markers: BTreeSet<ActorName>,
    #[serde(default)]
    pub gates: Vec<Gate>,
}

impl TopologyGraph {
    /// The six-actor featurization topology.
    pub fn featurization() -> Self {
        use names::*;
        let edges: [(&str, &[&str]); 6] = [
            (CONFIG_GENERATOR, &[UTILS_RETRIEVER, CODE_TEMPLATE_GENERATOR]),
            (UTILS_RETRIEVER, &[CODE_TEMPLATE_GENERATOR]),
            (CODE_TEMPLATE_GENERATOR, &[UTILS_RETRIEVER, TESTCASE_GENERATOR]),
            (TESTCASE_GENERATOR, &[TESTCASE_CODER, CODE_GENERATOR]),
            (TESTCASE_CODER, &[CODE_GENERATOR]),
            (
                CODE_GENERATOR,
                &[TESTCASE_GENERATOR, CODE_TEMPLATE_GENERATOR, CONFIG_GENERATOR, TESTCASE_CODER],
            ),
        ];
        let transitions = edges
            .iter()
            .map(|(src, dsts)| (ActorName::from(*src), dsts.iter().map(|d| ActorName::from(*d)).collect()))
            .collect();
        Self {
            actors: DEFAULT_ORDER.iter().map(|a| ActorName::from(*a)).collect(),
            transitions,
            entry: CONFIG_GENERATOR.into(),
            terminal_markers: [CODE_GENERATOR, TESTCASE_CODER].iter().map(|a| ActorName::from(*a)).collect(),
            gates: vec![Gate {
                actor: TESTCASE_CODER.into(),
                requires: CODE_GENERATOR.into(),
            }],
        }
    }

    /// Outgoing transitions of `actor` (empty when it has none).
    pub fn successors(&self, actor: &ActorName) -> &[ActorName] {
        self.transitions.get(actor).map(Vec::as_slice).unwrap_or(&[])
    }

    fn gated_out(&self, actor: &ActorName, status: &BTreeMap<ActorName, bool>) -> bool {
        self.gates
            .iter()
            .any(|g| &g.actor == actor && status.get(&g.requires) != Some(&true))
    }

    /// Shortest legal path from `from` to `to` (exclusive of `from`), under
    /// the gates evaluated against `status`.
    pub fn shortest_path(
        &self,
        from: &ActorName,
        to: &ActorName,
        status: &BTreeMap<ActorName, bool>,
    ) -> Option<Vec<ActorName>> {
        let mut prev: BTreeMap<&ActorName, &ActorName> = BTreeMap::new();
        let mut seen: BTreeSet<&ActorName> = BTreeSet::from([from]);
        let mut queue = VecDeque::from([from]);
        while let Some(node) = queue.pop_front() {
            for next in self.successors(node) {
                if self.gated_out(next, status) || !seen.insert(next) {
                    continue;
                }
                prev.insert(next, node);
                if next == to {
                    let mut path = vec![next.clone()];
                    let mut cur = next;
                    while let Some(p) = prev.get(cur) {
                        if *p == from {
                            break;
                        }
                        path.push((*p).clone());
                        cur = p;
                    }
                    path.reverse();
                    return Some(path);
                }
                queue.push_back(next);
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    UnknownTransitionSource,
    UnknownTransitionTarget,
    DuplicateTransition,
    UnknownEntry,
    UnreachableActor,
    UnknownTerminalMarker,
    UnknownGateActor,
    ReservedName,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    /// Offending node, or `source -> target` for an edge.
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, kind: FindingKind, subject: impl Into<String>, message: impl Into<String>) {
        self.findings.push(Finding {
            kind,
            subject: subject.into(),
            message: message.into(),
        });
    }
}

/// Checks every structural invariant of the graph. Findings are data; this
/// never fails.
pub fn validate_topology(graph: &TopologyGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    if graph.actors.iter().any(|a| a == names::HITL) {
        report.push(FindingKind::ReservedName, names::HITL, "`hitl` is reserved for the human tool");
    }

    for (source, targets) in &graph.transitions {
        if !graph.actors.contains(source) {
            report.push(
                FindingKind::UnknownTransitionSource,
                source.as_str(),
                format!("unknown transition source `{source}`"),
            );
        }
        let mut seen = BTreeSet::new();
        for target in targets {
            let edge = format!("{source} -> {target}");
            if !graph.actors.contains(target) {
                report.push(
                    FindingKind::UnknownTransitionTarget,
                    edge.clone(),
                    format!("unknown transition target `{target}`"),
                );
            }
            if !seen.insert(target) {
                report.push(FindingKind::DuplicateTransition, edge, "duplicate transition");
            }
        }
    }

    if !graph.actors.contains(&graph.entry) {
        report.push(
            FindingKind::UnknownEntry,
            graph.entry.as_str(),
            format!("entry `{}` is not an actor", graph.entry),
        );
    } else {
        let mut reached = BTreeSet::from([&graph.entry]);
        let mut stack = vec![&graph.entry];
        while let Some(node) = stack.pop() {
            for next in graph.successors(node) {
                if graph.actors.contains(next) && reached.insert(next) {
                    stack.push(next);
                }
            }
        }
        for actor in &graph.actors {
            if !reached.contains(actor) {
                report.push(
                    FindingKind::UnreachableActor,
                    actor.as_str(),
                    format!("`{actor}` is not reachable from entry `{}`", graph.entry),
                );
            }
        }
    }

    for marker in &graph.terminal_markers {
        if !graph.actors.contains(marker) {
            report.push(
                FindingKind::UnknownTerminalMarker,
                marker.as_str(),
                format!("terminal marker `{marker}` is not an actor"),
            );
        }
    }
    for gate in &graph.gates {
        for name in [&gate.actor, &gate.requires] {
            if !graph.actors.contains(name) {
                report.push(
                    FindingKind::UnknownGateActor,
                    name.as_str(),
                    format!("gate references unknown actor `{name}`"),
                );
            }
        }
    }
    report
}

/// Legal successors for the next step. `hitl` is always legal and is not
/// listed in `actors`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NextSteps {
    pub actors: Vec<ActorName>,
}

impl NextSteps {
    pub fn allows(&self, target: &StepTarget) -> bool {
        match target {
            StepTarget::Hitl => true,
            StepTarget::Actor(a) => self.actors.contains(a),
        }
    }

    /// Names including `hitl`, for diagnostics.
    pub fn describe(&self) -> String {
        let mut names: Vec<&str> = self.actors.iter().map(ActorName::as_str).collect();
        names.push(names::HITL);
        names.join(", ")
    }
}

/// Actors the next step may target, given the steps so far.
pub fn legal_next(graph: &TopologyGraph, memory: &ShortTermMemory) -> NextSteps {
    legal_from(graph, memory.last_actor(), &memory.actor_status)
}

/// Same as [`legal_next`] from an explicit last actor and status map.
pub fn legal_from(graph: &TopologyGraph, last: Option<&ActorName>, status: &BTreeMap<ActorName, bool>) -> NextSteps {
    let candidates: Vec<ActorName> = match last {
        None => vec![graph.entry.clone()],
        Some(last) => graph.successors(last).to_vec(),
    };
    NextSteps {
        actors: candidates.into_iter().filter(|a| !graph.gated_out(a, status)).collect(),
    }
}

/// Whether the episode has reached its success condition: every terminal
/// marker succeeded and no invoked actor's latest status is a failure.
pub fn episode_succeeded(graph: &TopologyGraph, status: &BTreeMap<ActorName, bool>) -> bool {
    graph.terminal_markers.iter().all(|m| status.get(m) == Some(&true)) && status.values().all(|ok| *ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuccessKind {
    SchemaParse,
    ErrorFreeExecution,
    FunctionsPresent,
    ScriptRunsAndWrites,
    ScenarioCountAndCoverage,
    PassRatioAboveThreshold,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArtifactKind {
    ConfigYaml,
    SelectedUtils,
    CodeTemplate,
    FeatureScript,
    TestcaseDefinitions,
    TestScript,
    Other(String),
}

impl ArtifactKind {
    pub fn as_str(&self) -> &str {
        match self {
            Self::ConfigYaml => "config_yaml",
            Self::SelectedUtils => "selected_utils",
            Self::CodeTemplate => "code_template",
            Self::FeatureScript => "feature_script",
            Self::TestcaseDefinitions => "testcase_definitions",
            Self::TestScript => "test_script",
            Self::Other(name) => name,
        }
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Other(name) => write!(f, "other:{name}"),
            known => f.write_str(known.as_str()),
        }
    }
}

impl std::str::FromStr for ArtifactKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "config_yaml" => Self::ConfigYaml,
            "selected_utils" => Self::SelectedUtils,
            "code_template" => Self::CodeTemplate,
            "feature_script" => Self::FeatureScript,
            "testcase_definitions" => Self::TestcaseDefinitions,
            "test_script" => Self::TestScript,
            other => Self::Other(other.strip_prefix("other:").unwrap_or(other).to_owned()),
        })
    }
}

impl Serialize for ArtifactKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ArtifactKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub kind: ArtifactKind,
    pub content: String,
}

/// One actor invocation's result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorOutcome {
    pub success: bool,
    pub attempts: u32,
    pub artifacts: Vec<Artifact>,
    pub reason_tag: Option<String>,
    pub fix_tag: Option<String>,
    pub terminated: bool,
    pub error_log: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlMode {
    Console,
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitlExchange {
    pub question: String,
    pub context: String,
    pub answer: String,
    pub mode: HitlMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Planner,
    Sequential,
    Random,
    Forced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallType {
    Actor,
    Tool,
}

/// Target of a step: an actor, or the human tool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum StepTarget {
    Actor(ActorName),
    Hitl,
}

impl From<StepTarget> for String {
    fn from(t: StepTarget) -> Self {
        match t {
            StepTarget::Actor(a) => a.0,
            StepTarget::Hitl => names::HITL.to_owned(),
        }
    }
}

impl From<String> for StepTarget {
    fn from(s: String) -> Self {
        if s == names::HITL {
            Self::Hitl
        } else {
            Self::Actor(ActorName(s))
        }
    }
}

impl fmt::Display for StepTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Actor(a) => a.fmt(f),
            Self::Hitl => f.write_str(names::HITL),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepOutcome {
    Actor(ActorOutcome),
    Hitl(HitlExchange),
}

/// One planner step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub decided_by: DecidedBy,
    pub call_type: CallType,
    pub target: StepTarget,
    pub planner_input: String,
    pub outcome: StepOutcome,
    /// Microseconds since episode start (or a logical tick).
    pub timestamp: u64,
}

impl StepRecord {
    pub fn actor_outcome(&self) -> Option<(&ActorName, &ActorOutcome)> {
        match (&self.target, &self.outcome) {
            (StepTarget::Actor(a), StepOutcome::Actor(o)) => Some((a, o)),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MemoryError {
    #[error("step index {got} does not follow {expected}")]
    NonDenseIndex { expected: usize, got: usize },
    #[error("tool call must target hitl, got `{0}`")]
    ToolTarget(String),
    #[error("outcome kind does not match target `{0}`")]
    OutcomeMismatch(String),
}

/// Planner state: the append-only step list plus folds over it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ShortTermMemory {
    steps: Vec<StepRecord>,
    actor_status: BTreeMap<ActorName, bool>,
    artifacts: BTreeMap<ArtifactKind, String>,
}

impl ShortTermMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds memory by folding a step list.
    pub fn from_steps(steps: impl IntoIterator<Item = StepRecord>) -> Result<Self, MemoryError> {
        let mut memory = Self::new();
        for step in steps {
            memory.append(step)?;
        }
        Ok(memory)
    }

    pub fn append(&mut self, step: StepRecord) -> Result<(), MemoryError> {
        if step.index != self.steps.len() {
            return Err(MemoryError::NonDenseIndex {
                expected: self.steps.len(),
                got: step.index,
            });
        }
        match (&step.call_type, &step.target, &step.outcome) {
            (CallType::Tool, StepTarget::Hitl, StepOutcome::Hitl(_)) => {}
            (CallType::Tool, other, _) => return Err(MemoryError::ToolTarget(other.to_string())),
            (CallType::Actor, StepTarget::Actor(name), StepOutcome::Actor(outcome)) => {
                self.actor_status.insert(name.clone(), outcome.success);
                for artifact in &outcome.artifacts {
                    self.artifacts.insert(artifact.kind.clone(), artifact.content.clone());
                }
            }
            (CallType::Actor, target, _) => return Err(MemoryError::OutcomeMismatch(target.to_string())),
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actor_status(&self) -> &BTreeMap<ActorName, bool> {
        &self.actor_status
    }

    pub fn status_of(&self, actor: &ActorName) -> Option<bool> {
        self.actor_status.get(actor).copied()
    }

    pub fn artifacts(&self) -> &BTreeMap<ArtifactKind, String> {
        &self.artifacts
    }

    pub fn artifact(&self, kind: &ArtifactKind) -> Option<&str> {
        self.artifacts.get(kind).map(String::as_str)
    }

    /// Most recent actor target, skipping tool steps.
    pub fn last_actor(&self) -> Option<&ActorName> {
        self.steps.iter().rev().find_map(|s| match &s.target {
            StepTarget::Actor(a) => Some(a),
            StepTarget::Hitl => None,
        })
    }

    pub fn last_step(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn actor_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.call_type == CallType::Actor).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    ExhaustedIterations,
    PlannerAbort,
    HardError,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub successes: u64,
    pub failures: u64,
}

impl Tally {
    pub fn record(&mut self, success: bool) {
        if success {
            self.successes += 1;
        } else {
            self.failures += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.successes + self.failures
    }

    pub fn add(&mut self, other: &Tally) {
        self.successes += other.successes;
        self.failures += other.failures;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub status: EpisodeStatus,
    pub total_steps: usize,
    pub per_actor: BTreeMap<ActorName, Tally>,
    pub hitl_exchanges: usize,
    pub seed: Option<u64>,
    pub run_label: String,
    /// Task identifier used to group runs for pass@k.
    #[serde(default)]
    pub task: String,
    #[serde(default)]
    pub policy: String,
    /// Latest success flag per invoked actor at episode end.
    #[serde(default)]
    pub final_status: BTreeMap<ActorName, bool>,
}

impl EpisodeResult {
    pub fn is_success(&self) -> bool {
        self.status == EpisodeStatus::Success
    }

    /// Per-actor tallies and HITL count folded from a step list.
    pub fn tallies(steps: &[StepRecord]) -> (BTreeMap<ActorName, Tally>, usize) {
        let mut per_actor: BTreeMap<ActorName, Tally> = BTreeMap::new();
        let mut hitl = 0;
        for step in steps {
            match step.actor_outcome() {
                Some((name, outcome)) => per_actor.entry(name.clone()).or_default().record(outcome.success),
                None => hitl += 1,
            }
        }
        (per_actor, hitl)
    }
}
