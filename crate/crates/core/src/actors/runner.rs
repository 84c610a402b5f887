use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::harness::{Harness, HarnessError, HarnessJob, HarnessReport};
use super::spec::ActorSpec;
use super::success::{evaluate_success, parse_selected_utils, resolve_import, EvalContext};
use super::tagged::{declared_functions, parse_tagged, parse_tags, TaggedError};
use crate::llm::{Bindings, Chat, ChatRequest, LlmError, PromptTemplate, TemplateError};
use crate::model::{ActorOutcome, Artifact, SuccessKind};
use crate::taskio::{ConfigSchema, SourceFile};

/// Fixed slot values plus the planner's instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActorInput {
    pub fixed: Bindings,
    pub planner_input: String,
}

/// Task and memory state the success checks and harness jobs need.
#[derive(Debug, Clone, Copy)]
pub struct ActorEnv<'a> {
    pub config_schema: &'a ConfigSchema,
    pub reusable_sources: &'a [SourceFile],
    pub required_functions: &'a BTreeSet<String>,
    pub script_name: &'a str,
    /// Latest feature script, or the template when no script exists yet.
    pub script: Option<&'a str>,
    pub config: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActorError {
    #[error("actor `{actor}`: {source}")]
    Backend {
        actor: String,
        #[source]
        source: LlmError,
    },
    #[error("actor `{actor}`: {source}")]
    Harness {
        actor: String,
        #[source]
        source: HarnessError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl ActorError {
    /// Backend or harness outages, as opposed to configuration mistakes.
    pub fn is_outage(&self) -> bool {
        matches!(self, Self::Backend { .. } | Self::Harness { .. })
    }
}

struct Attempt {
    payload: Option<String>,
    error: String,
}

fn render_prompt(
    spec: &ActorSpec,
    template: &PromptTemplate,
    input: &ActorInput,
    history: &[Attempt],
) -> Result<String, TemplateError> {
    let mut bindings = input.fixed.clone();
    bindings.insert(spec.planner_slot.clone(), input.planner_input.clone());
    let mut prompt = template.render(&bindings)?;
    if !history.is_empty() {
        prompt.push_str("\n\nPREVIOUS ATTEMPTS (fix these errors; fill in the reason and fix tags):\n");
        for (i, attempt) in history.iter().enumerate() {
            let n = i + 1;
            if let Some(payload) = &attempt.payload {
                let _ = write!(prompt, "--- attempt {n} output ---\n```{}\n{payload}\n```\n", spec.language);
            }
            let _ = writeln!(prompt, "--- attempt {n} error ---\n{}", attempt.error);
        }
    }
    Ok(prompt)
}

fn extract_payload(spec: &ActorSpec, text: &str) -> Result<String, TaggedError> {
    match parse_tagged(text) {
        Ok(out) => Ok(out.payload),
        Err(TaggedError::NoPayload) if spec.bare_payload => {
            let rest = text[parse_tags(text).end..].trim();
            if rest.is_empty() {
                Err(TaggedError::NoPayload)
            } else {
                Ok(rest.to_owned())
            }
        }
        Err(e) => Err(e),
    }
}

/// Harness job for a payload, if its success check needs one.
fn harness_job<'a>(kind: SuccessKind, payload: &'a str, env: &ActorEnv<'a>, imports: &'a [String]) -> Option<HarnessJob<'a>> {
    match kind {
        SuccessKind::ErrorFreeExecution if !imports.is_empty() => Some(HarnessJob::LoadUtils { imports, payload }),
        SuccessKind::ScriptRunsAndWrites => Some(HarnessJob::RunScript {
            script: payload,
            script_name: env.script_name,
            config: env.config,
        }),
        SuccessKind::PassRatioAboveThreshold => Some(HarnessJob::RunTests {
            tests: payload,
            script: env.script,
            script_name: env.script_name,
            config: env.config,
        }),
        _ => None,
    }
}

/// Imports worth loading: only when the list parses and every entry resolves.
fn loadable_imports(kind: SuccessKind, payload: &str, env: &ActorEnv<'_>) -> Vec<String> {
    if kind != SuccessKind::ErrorFreeExecution {
        return Vec::new();
    }
    match parse_selected_utils(payload) {
        Ok(utils) if utils.iter().all(|u| resolve_import(&u.method_import, env.reusable_sources).is_ok()) => {
            utils.into_iter().map(|u| u.method_import).collect()
        }
        _ => Vec::new(),
    }
}

/// Render, chat, parse, evaluate; retry with accumulated errors until
/// success, TERMINATE, or `max_retries` attempts.
pub fn run_actor(
    spec: &ActorSpec,
    template: &PromptTemplate,
    input: &ActorInput,
    env: &ActorEnv<'_>,
    chat: &mut dyn Chat,
    harness: &mut dyn Harness,
) -> Result<ActorOutcome, ActorError> {
    let mut history: Vec<Attempt> = Vec::new();
    let mut outcome = ActorOutcome {
        success: false,
        attempts: 0,
        artifacts: Vec::new(),
        reason_tag: None,
        fix_tag: None,
        terminated: false,
        error_log: Vec::new(),
    };
    let script_functions = env.script.map(declared_functions).unwrap_or_default();

    while outcome.attempts < spec.max_retries {
        outcome.attempts += 1;
        let prompt = render_prompt(spec, template, input, &history)?;
        let reply = chat
            .chat(ChatRequest::new(spec.name.as_str(), prompt))
            .map_err(|source| ActorError::Backend {
                actor: spec.name.to_string(),
                source,
            })?;

        let tags = parse_tags(&reply);
        outcome.reason_tag = tags.reason.clone();
        outcome.fix_tag = tags.fix.clone();
        if tags.terminated() {
            outcome.terminated = true;
            let reason = tags.reason.unwrap_or_default();
            outcome.error_log.push(format!("attempt {}: TERMINATE requested: {reason}", outcome.attempts));
            tracing::debug!(actor = %spec.name, attempts = outcome.attempts, "actor terminated");
            return Ok(outcome);
        }

        let payload = match extract_payload(spec, &reply) {
            Ok(p) => p,
            Err(e) => {
                let error = format!("attempt {}: {e}", outcome.attempts);
                outcome.error_log.push(error.clone());
                history.push(Attempt { payload: None, error });
                continue;
            }
        };

        let imports = loadable_imports(spec.success_kind, &payload, env);
        let harness_result: Option<Result<HarnessReport, HarnessError>> =
            harness_job(spec.success_kind, &payload, env, &imports).map(|job| harness.execute(&job));
        if let Some(Err(e @ HarnessError::Unavailable(_))) = &harness_result {
            return Err(ActorError::Harness {
                actor: spec.name.to_string(),
                source: e.clone(),
            });
        }

        let ctx = EvalContext {
            config_schema: env.config_schema,
            reusable_sources: env.reusable_sources,
            required_functions: env.required_functions,
            script_functions: &script_functions,
            harness: harness_result.as_ref(),
        };
        match evaluate_success(spec.success_kind, &payload, &ctx) {
            Ok(v) if v.success => {
                outcome.success = true;
                outcome.artifacts.push(Artifact {
                    kind: spec.produces.clone(),
                    content: payload,
                });
                return Ok(outcome);
            }
            Ok(v) => {
                let error = format!("attempt {}: {}", outcome.attempts, v.evidence);
                outcome.error_log.push(error.clone());
                history.push(Attempt {
                    payload: Some(payload),
                    error,
                });
            }
            Err(e) => {
                let error = format!("attempt {}: {e}", outcome.attempts);
                outcome.error_log.push(error.clone());
                history.push(Attempt {
                    payload: Some(payload),
                    error,
                });
            }
        }
    }
    Ok(outcome)
}
