use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::Deserialize;

use super::{ChatBackend, ChatRequest, LlmError};

/// Queue key consumed when a tag has no dedicated queue.
pub const ANY_TAG: &str = "*";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnExhausted {
    #[default]
    Error,
    RepeatLast,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TranscriptDoc {
    Flat(Vec<String>),
    Tagged {
        #[serde(default)]
        on_exhausted: OnExhausted,
        queues: BTreeMap<String, Vec<String>>,
    },
}

/// Plays back recorded responses. Responses are consumed from the queue
/// named after the request tag, falling back to the `*` queue.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    queues: BTreeMap<String, VecDeque<String>>,
    last: BTreeMap<String, String>,
    on_exhausted: OnExhausted,
}

impl ScriptedBackend {
    /// One shared queue.
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let mut b = Self::default();
        b.queues
            .insert(ANY_TAG.into(), responses.into_iter().map(Into::into).collect());
        b
    }

    pub fn with_queue(mut self, tag: impl Into<String>, responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.queues
            .entry(tag.into())
            .or_default()
            .extend(responses.into_iter().map(Into::into));
        self
    }

    pub fn repeat_last(mut self) -> Self {
        self.on_exhausted = OnExhausted::RepeatLast;
        self
    }

    /// Parses a YAML/JSON transcript: either a list of responses, or
    /// `{on_exhausted, queues: {tag: [..]}}`.
    pub fn from_transcript(text: &str) -> Result<Self, LlmError> {
        let doc: TranscriptDoc =
            serde_yaml::from_str(text).map_err(|e| LlmError::Config(format!("bad transcript: {e}")))?;
        Ok(match doc {
            TranscriptDoc::Flat(responses) => Self::new(responses),
            TranscriptDoc::Tagged { on_exhausted, queues } => Self {
                queues: queues.into_iter().map(|(k, v)| (k, v.into())).collect(),
                last: BTreeMap::new(),
                on_exhausted,
            },
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("reading transcript {}: {e}", path.display())))?;
        Self::from_transcript(&text)
    }

    pub fn remaining(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let key = if self.queues.get(&request.tag).is_some_and(|q| !q.is_empty()) {
            request.tag.clone()
        } else if self.queues.get(ANY_TAG).is_some_and(|q| !q.is_empty()) {
            ANY_TAG.to_owned()
        } else {
            if self.on_exhausted == OnExhausted::RepeatLast {
                if let Some(last) = self.last.get(&request.tag).or_else(|| self.last.get(ANY_TAG)) {
                    return Ok(last.clone());
                }
            }
            return Err(LlmError::Unavailable(format!(
                "scripted transcript exhausted for `{}`",
                request.tag
            )));
        };
        let response = self.queues.get_mut(&key).and_then(VecDeque::pop_front).expect("queue checked non-empty");
        self.last.insert(key, response.clone());
        Ok(response)
    }

    fn describe(&self) -> String {
        "scripted".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tag: &str) -> ChatRequest {
        ChatRequest::new(tag, "prompt")
    }

    #[test]
    fn plays_back_in_order_then_fails() {
        let mut b = ScriptedBackend::new([r#"{"call_type":"actor"}"#]);
        assert_eq!(b.complete(&req("planner")).unwrap(), r#"{"call_type":"actor"}"#);
        assert!(matches!(b.complete(&req("planner")), Err(LlmError::Unavailable(_))));
    }

    #[test]
    fn tagged_queues_with_fallback() {
        let mut b = ScriptedBackend::from_transcript(
            "queues:\n  planner: [p1]\n  '*': [any1, any2]\n",
        )
        .unwrap();
        assert_eq!(b.complete(&req("planner")).unwrap(), "p1");
        assert_eq!(b.complete(&req("planner")).unwrap(), "any1");
        assert_eq!(b.complete(&req("code_generator")).unwrap(), "any2");
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn repeat_last_keeps_answering() {
        let mut b = ScriptedBackend::from_transcript(
            "on_exhausted: repeat_last\nqueues:\n  code_generator: [a, b]\n",
        )
        .unwrap();
        for expected in ["a", "b", "b", "b"] {
            assert_eq!(b.complete(&req("code_generator")).unwrap(), expected);
        }
        assert!(b.complete(&req("planner")).is_err());
    }
}
