use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::llm::PromptSet;
use crate::model::{names, ActorName, ArtifactKind, SuccessKind, TopologyGraph};

pub const DEFAULT_MAX_RETRIES: u32 = 5;

/// Where the executor finds the value for one template placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotSource {
    Fsc,
    Dfr,
    Readme,
    ExistingUtils,
    ScriptName,
    /// Latest artifact among the listed kinds, first match wins.
    Latest(Vec<ArtifactKind>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorSpec {
    pub name: ActorName,
    pub description: String,
    pub arg_names: Vec<String>,
    pub success_kind: SuccessKind,
    pub max_retries: u32,
    /// End-stage actors whose criteria are stricter.
    pub strict: bool,
    /// Template name in the prompt set.
    pub template: String,
    /// Placeholder that receives the planner's instruction.
    pub planner_slot: String,
    /// Prefix the planner slot with the task summary.
    pub task_summary_in_planner_slot: bool,
    pub inputs: Vec<(String, SlotSource)>,
    pub produces: ArtifactKind,
    /// Accept an unfenced reply as the payload.
    pub bare_payload: bool,
    /// Fence language used when echoing payloads back.
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("actor `{0}` has max_retries 0")]
    ZeroRetries(ActorName),
    #[error("actor `{actor}` references missing template `{template}`")]
    MissingTemplate { actor: ActorName, template: String },
    #[error("actor `{actor}` slots {slots:?} do not match template placeholders {placeholders:?}")]
    SlotMismatch {
        actor: ActorName,
        slots: BTreeSet<String>,
        placeholders: BTreeSet<String>,
    },
    #[error("graph actor `{0}` has no registered spec")]
    Unregistered(ActorName),
}

#[derive(Debug, Clone, Default)]
pub struct ActorRegistry {
    specs: BTreeMap<ActorName, ActorSpec>,
    aliases: BTreeMap<ActorName, ActorName>,
}

fn spec(
    name: &str,
    description: &str,
    success_kind: SuccessKind,
    strict: bool,
    planner_slot: &str,
    inputs: Vec<(&str, SlotSource)>,
    produces: ArtifactKind,
    bare_payload: bool,
    language: &str,
) -> ActorSpec {
    ActorSpec {
        name: name.into(),
        description: description.to_owned(),
        arg_names: vec!["planner_input".to_owned()],
        success_kind,
        max_retries: DEFAULT_MAX_RETRIES,
        strict,
        template: name.to_owned(),
        planner_slot: planner_slot.to_owned(),
        task_summary_in_planner_slot: planner_slot == "user_task_details",
        inputs: inputs.into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
        produces,
        bare_payload,
        language: language.to_owned(),
    }
}

impl ActorRegistry {
    /// The six featurization actors.
    pub fn featurization() -> Self {
        use ArtifactKind::*;
        use SlotSource::*;
        let script = || Latest(vec![FeatureScript, CodeTemplate]);
        let specs = [
            spec(
                names::CONFIG_GENERATOR,
                "Understand the task from FSC and generate output config yaml for the task.",
                SuccessKind::SchemaParse,
                false,
                "planner_input",
                vec![("fsc", Fsc), ("dataset_catalog", Dfr), ("readme", Readme)],
                ConfigYaml,
                false,
                "yaml",
            ),
            spec(
                names::UTILS_RETRIEVER,
                "Given all existing utils select the ones that are relevant for the task.",
                SuccessKind::ErrorFreeExecution,
                false,
                "user_task_details",
                vec![("existing_utils", ExistingUtils), ("script_content", script())],
                SelectedUtils,
                true,
                "json",
            ),
            spec(
                names::CODE_TEMPLATE_GENERATOR,
                "Generate the code template with method signatures and docstrings for the task.",
                SuccessKind::FunctionsPresent,
                false,
                "planner_input",
                vec![
                    ("script_name", ScriptName),
                    ("codebase_readme", Readme),
                    ("dfr", Dfr),
                    ("fsc", Fsc),
                    ("selected_utils", Latest(vec![SelectedUtils])),
                ],
                CodeTemplate,
                true,
                "python",
            ),
            spec(
                names::TESTCASE_GENERATOR,
                "Generate test case scenarios to verify functionality, logic and edge cases for the task.",
                SuccessKind::ScenarioCountAndCoverage,
                false,
                "user_task_details",
                vec![("dfr", Dfr), ("script_content", script())],
                TestcaseDefinitions,
                true,
                "json",
            ),
            spec(
                names::CODE_GENERATOR,
                "Implement the methods in the task script using the method signatures and descriptions of methods and task.",
                SuccessKind::ScriptRunsAndWrites,
                true,
                "user_task_details",
                vec![
                    ("codebase_readme", Readme),
                    ("dfr", Dfr),
                    ("fsc", Fsc),
                    ("script_name", ScriptName),
                    ("script_content", script()),
                    ("config", Latest(vec![ConfigYaml])),
                    ("selected_utils", Latest(vec![SelectedUtils])),
                    ("test_script_content", Latest(vec![TestScript, TestcaseDefinitions])),
                ],
                FeatureScript,
                false,
                "python",
            ),
            spec(
                names::TESTCASE_CODER,
                "Implement all the test cases from test case definitions in required format with mocks.",
                SuccessKind::PassRatioAboveThreshold,
                true,
                "user_task_details",
                vec![
                    ("readme", Readme),
                    ("dfr", Dfr),
                    ("config", Latest(vec![ConfigYaml])),
                    ("script_content", script()),
                    ("test_script_content", Latest(vec![TestcaseDefinitions, TestScript])),
                ],
                TestScript,
                false,
                "python",
            ),
        ];
        let mut registry = Self::default();
        for s in specs {
            registry.register(s);
        }
        // listed by the planner prompt, not wired into the topology
        registry.alias(names::FEATURE_SELECTOR, names::CONFIG_GENERATOR);
        registry
    }

    pub fn register(&mut self, spec: ActorSpec) {
        self.specs.insert(spec.name.clone(), spec);
    }

    pub fn alias(&mut self, alias: &str, target: &str) {
        self.aliases.insert(alias.into(), target.into());
    }

    pub fn get(&self, name: &ActorName) -> Option<&ActorSpec> {
        self.specs
            .get(name)
            .or_else(|| self.aliases.get(name).and_then(|t| self.specs.get(t)))
    }

    pub fn get_mut(&mut self, name: &ActorName) -> Option<&mut ActorSpec> {
        self.specs.get_mut(name)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ActorSpec> {
        self.specs.values()
    }

    /// Checks every spec against the prompt set and the graph.
    pub fn validate(&self, prompts: &PromptSet, graph: &TopologyGraph) -> Result<(), RegistryError> {
        for spec in self.specs.values() {
            if spec.max_retries == 0 {
                return Err(RegistryError::ZeroRetries(spec.name.clone()));
            }
            let template = prompts.get(&spec.template).map_err(|_| RegistryError::MissingTemplate {
                actor: spec.name.clone(),
                template: spec.template.clone(),
            })?;
            let mut slots: BTreeSet<String> = spec.inputs.iter().map(|(k, _)| k.clone()).collect();
            slots.insert(spec.planner_slot.clone());
            if slots != template.required_placeholders {
                return Err(RegistryError::SlotMismatch {
                    actor: spec.name.clone(),
                    slots,
                    placeholders: template.required_placeholders.clone(),
                });
            }
        }
        for actor in &graph.actors {
            if self.get(actor).is_none() {
                return Err(RegistryError::Unregistered(actor.clone()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_registry_matches_templates_and_graph() {
        let registry = ActorRegistry::featurization();
        registry.validate(&PromptSet::defaults(), &TopologyGraph::featurization()).unwrap();
        assert!(registry.specs().all(|s| s.max_retries == 5));
        let strict: Vec<_> = registry.specs().filter(|s| s.strict).map(|s| s.name.as_str()).collect();
        assert_eq!(strict, ["code_generator", "testcase_coder"]);
    }

    #[test]
    fn alias_resolves_without_joining_graph() {
        let registry = ActorRegistry::featurization();
        let spec = registry.get(&names::FEATURE_SELECTOR.into()).unwrap();
        assert_eq!(spec.name, names::CONFIG_GENERATOR);
        assert!(!TopologyGraph::featurization().actors.contains(&ActorName::from(names::FEATURE_SELECTOR)));
    }

    #[test]
    fn slot_mismatch_is_reported() {
        let mut registry = ActorRegistry::featurization();
        registry.get_mut(&names::CONFIG_GENERATOR.into()).unwrap().inputs.pop();
        let err = registry.validate(&PromptSet::defaults(), &TopologyGraph::featurization()).unwrap_err();
        assert!(matches!(err, RegistryError::SlotMismatch { .. }));
    }
}
