use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{names, CallType, StepTarget};

pub const MAX_PLANNER_INPUT_WORDS: usize = 150;

/// The planner's output object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerDecision {
    pub call_type: CallType,
    pub actor: String,
    pub reason: String,
    pub args: DecisionArgs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionArgs {
    pub planner_input: String,
}

impl PlannerDecision {
    pub fn target(&self) -> StepTarget {
        StepTarget::from(self.actor.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecisionError {
    #[error("no JSON object found in the planner output")]
    NoObject,
    #[error("planner output is not valid JSON: {0}")]
    Json(String),
    #[error("planner output must have exactly the fields call_type, actor, reason, args; got {0}")]
    Fields(String),
    #[error("{0}")]
    Invalid(String),
}

/// First balanced `{...}` in `text`, skipping braces inside strings.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<String, DecisionError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Err(DecisionError::Invalid(format!("`{key}` is missing"))),
        Some(other) => Ok(other.to_string()),
    }
}

/// Parses and shape-checks a planner reply. Legality against the topology
/// is checked by the caller.
pub fn parse_decision(text: &str) -> Result<PlannerDecision, DecisionError> {
    let raw = first_object(text).ok_or(DecisionError::NoObject)?;
    let value: Value = serde_json::from_str(raw).map_err(|e| DecisionError::Json(e.to_string()))?;
    let obj = value.as_object().ok_or(DecisionError::NoObject)?;
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    if keys != ["actor", "args", "call_type", "reason"] {
        return Err(DecisionError::Fields(keys.join(", ")));
    }
    let call_type = match text_field(obj, "call_type")?.trim() {
        "actor" => CallType::Actor,
        "tool" => CallType::Tool,
        other => return Err(DecisionError::Invalid(format!("call_type must be `actor` or `tool`, got `{other}`"))),
    };
    let actor = text_field(obj, "actor")?.trim().to_owned();
    let reason = text_field(obj, "reason")?;
    let args = obj
        .get("args")
        .and_then(Value::as_object)
        .ok_or_else(|| DecisionError::Invalid("`args` must be an object".into()))?;
    let planner_input = text_field(args, "planner_input")?;

    match (call_type, actor == names::HITL) {
        (CallType::Tool, false) => {
            return Err(DecisionError::Invalid(format!("tool calls must target `hitl`, got `{actor}`")))
        }
        (CallType::Actor, true) => return Err(DecisionError::Invalid("`hitl` must be called with call_type `tool`".into())),
        (CallType::Tool, true) if planner_input.trim().is_empty() => {
            return Err(DecisionError::Invalid("a hitl call needs a question in planner_input".into()))
        }
        _ => {}
    }
    Ok(PlannerDecision {
        call_type,
        actor,
        reason,
        args: DecisionArgs { planner_input },
    })
}

/// Cuts `text` to at most `max` whitespace-separated words. Returns the
/// original word count when truncation happened.
pub fn truncate_words(text: &str, max: usize) -> (String, Option<usize>) {
    let count = text.split_whitespace().count();
    if count <= max {
        return (text.to_owned(), None);
    }
    let mut seen = 0;
    let mut end = text.len();
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                seen += 1;
                if seen == max {
                    end = i;
                    break;
                }
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    (text[..end].to_owned(), Some(count))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_documented_shape() {
        let d = parse_decision(
            r#"{"call_type":"actor","actor":"config_generator","reason":"start","args":{"planner_input":"generate config"}}"#,
        )
        .unwrap();
        assert_eq!(d.call_type, CallType::Actor);
        assert_eq!(d.actor, "config_generator");
        assert_eq!(d.args.planner_input, "generate config");
    }

    #[test]
    fn tolerates_surrounding_prose_and_fences() {
        let text = "Next step:\n```json\n{\"call_type\": \"tool\", \"actor\": \"hitl\", \"reason\": \"r {x}\", \"args\": {\"planner_input\": \"is 0 null?\"}}\n```";
        let d = parse_decision(text).unwrap();
        assert_eq!(d.target(), StepTarget::Hitl);
        assert_eq!(d.reason, "r {x}");
    }

    #[test]
    fn rejects_wrong_fields_and_shapes() {
        assert_eq!(parse_decision("nothing here"), Err(DecisionError::NoObject));
        assert!(matches!(
            parse_decision(r#"{"call_type":"actor","actor":"x","args":{"planner_input":""}}"#),
            Err(DecisionError::Fields(_))
        ));
        assert!(matches!(
            parse_decision(r#"{"call_type":"actor","actor":"x","reason":"","args":{"planner_input":""},"extra":1}"#),
            Err(DecisionError::Fields(_))
        ));
        assert!(matches!(
            parse_decision(r#"{"call_type":"tool","actor":"code_generator","reason":"","args":{"planner_input":"q"}}"#),
            Err(DecisionError::Invalid(_))
        ));
        assert!(matches!(
            parse_decision(r#"{"call_type":"actor","actor":"hitl","reason":"","args":{"planner_input":"q"}}"#),
            Err(DecisionError::Invalid(_))
        ));
        assert!(matches!(
            parse_decision(r#"{"call_type":"actor","actor":"x","reason":"","args":[]}"#),
            Err(DecisionError::Invalid(_))
        ));
    }

    #[test]
    fn truncation_keeps_first_words() {
        let long: String = (0..200).map(|i| format!("w{i} ")).collect();
        let (cut, original) = truncate_words(&long, MAX_PLANNER_INPUT_WORDS);
        assert_eq!(original, Some(200));
        assert_eq!(cut.split_whitespace().count(), 150);
        assert!(cut.ends_with("w149"));
        assert_eq!(truncate_words("a b  c", 3), ("a b  c".to_owned(), None));
    }
}
