//! Executor duties: filling each actor's fixed slots from the task and
//! short-term memory.

use std::collections::BTreeSet;

use crate::actors::{ActorEnv, ActorInput, ActorSpec, SlotSource};
use crate::model::{ArtifactKind, ShortTermMemory};
use crate::taskio::TaskSpec;

/// Slot text used when an upstream artifact does not exist yet.
pub const NOT_AVAILABLE: &str = "Not available yet.";

fn slot_value(source: &SlotSource, task: &TaskSpec, memory: &ShortTermMemory) -> String {
    match source {
        SlotSource::Fsc => task.fsc_text.clone(),
        SlotSource::Dfr => task.dfr_text.clone(),
        SlotSource::Readme => task.readme.clone(),
        SlotSource::ExistingUtils => task.existing_utils(),
        SlotSource::ScriptName => task.script_name(),
        SlotSource::Latest(kinds) => kinds
            .iter()
            .find_map(|k| memory.artifact(k))
            .unwrap_or(NOT_AVAILABLE)
            .to_owned(),
    }
}

pub fn assemble_input(spec: &ActorSpec, task: &TaskSpec, memory: &ShortTermMemory, planner_input: &str) -> ActorInput {
    let fixed = spec
        .inputs
        .iter()
        .map(|(slot, source)| (slot.clone(), slot_value(source, task, memory)))
        .collect();
    let planner_input = if spec.task_summary_in_planner_slot {
        let mut text = task.summary();
        if !planner_input.trim().is_empty() {
            text.push_str("\nAdditional guidance:\n");
            text.push_str(planner_input);
        }
        text
    } else {
        planner_input.to_owned()
    };
    ActorInput { fixed, planner_input }
}

pub fn actor_env<'a>(
    task: &'a TaskSpec,
    memory: &'a ShortTermMemory,
    required_functions: &'a BTreeSet<String>,
    script_name: &'a str,
) -> ActorEnv<'a> {
    ActorEnv {
        config_schema: &task.config_schema,
        reusable_sources: &task.reusable_sources,
        required_functions,
        script_name,
        script: memory
            .artifact(&ArtifactKind::FeatureScript)
            .or_else(|| memory.artifact(&ArtifactKind::CodeTemplate)),
        config: memory.artifact(&ArtifactKind::ConfigYaml),
    }
}
