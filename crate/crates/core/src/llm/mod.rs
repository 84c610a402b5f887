//! Model access behind one chat interface, plus prompt templates.

mod http;
mod prompts;
mod scripted;
mod template;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::HttpChatBackend;
pub use prompts::{PromptError, PromptSet, DEFAULT_TEMPLATES};
pub use scripted::{OnExhausted, ScriptedBackend, ANY_TAG};
pub use template::{bindings, Bindings, PromptTemplate, TemplateError};

use crate::log::{EventSink, LogRecord};

pub const DEFAULT_TEMPERATURE: f32 = 0.1;
pub const DEFAULT_MAX_TOKENS: u32 = 8192;
pub const DEFAULT_CALL_BUDGET: u32 = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub prompt: String,
    pub temperature: f32,
    pub max_tokens: u32,
    /// Caller identity (planner or actor name); scripted playback keys on it.
    pub tag: String,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            tag: tag.into(),
        }
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 1]", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    /// Transport or process failure; worth retrying.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("chat call budget of {0} exhausted")]
    BudgetExceeded(u32),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait ChatBackend: Send {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError>;
    fn describe(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Anything that answers a chat request; what actors and the planner see.
pub trait Chat {
    fn chat(&mut self, request: ChatRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallBudget {
    pub used: u32,
    pub cap: u32,
}

impl CallBudget {
    pub fn new(cap: u32) -> Self {
        Self { used: 0, cap }
    }
}

impl Default for CallBudget {
    fn default() -> Self {
        Self::new(DEFAULT_CALL_BUDGET)
    }
}

/// Budgeted, retried, logged access to a backend for one episode.
pub struct Gateway<'a> {
    pub backend: &'a mut dyn ChatBackend,
    pub sink: &'a mut dyn EventSink,
    pub budget: &'a mut CallBudget,
    pub retries: u32,
    pub backoff: Duration,
}

impl Chat for Gateway<'_> {
    fn chat(&mut self, request: ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let mut attempt = 0;
        loop {
            if self.budget.used >= self.budget.cap {
                return Err(LlmError::BudgetExceeded(self.budget.cap));
            }
            self.budget.used += 1;
            let result = self.backend.complete(&request);
            self.sink.emit(&LogRecord::Chat {
                tag: request.tag.clone(),
                request: request.clone(),
                response: result.as_ref().ok().cloned(),
                error: result.as_ref().err().map(ToString::to_string),
            });
            match result {
                Err(LlmError::Unavailable(_)) if attempt < self.retries => {
                    attempt += 1;
                    if !self.backoff.is_zero() {
                        std::thread::sleep(self.backoff * attempt);
                    }
                }
                other => return other,
            }
        }
    }
}

/// `chat(backend, request)` with logging into `sink` and a fresh budget.
pub fn chat(backend: &mut dyn ChatBackend, sink: &mut dyn EventSink, request: ChatRequest) -> Result<String, LlmError> {
    let mut budget = CallBudget::default();
    Gateway {
        backend,
        sink,
        budget: &mut budget,
        retries: 0,
        backoff: Duration::ZERO,
    }
    .chat(request)
}

/// Builds a backend from a selector string: `scripted:<transcript>` (path
/// relative to `base_dir`) or `http-chat:<url>`.
pub fn backend_from_selector(
    selector: &str,
    base_dir: &Path,
    model: Option<String>,
    api_key_env: Option<&str>,
) -> Result<Box<dyn ChatBackend>, LlmError> {
    let (kind, arg) = selector
        .split_once(':')
        .ok_or_else(|| LlmError::Config(format!("backend `{selector}` should look like kind:argument")))?;
    match kind {
        "scripted" => {
            let path = Path::new(arg);
            let path = if path.is_absolute() { path.to_owned() } else { base_dir.join(path) };
            Ok(Box::new(ScriptedBackend::from_file(&path)?))
        }
        "http-chat" => {
            let api_key = match api_key_env {
                Some(var) => Some(
                    std::env::var(var).map_err(|_| LlmError::Config(format!("environment variable `{var}` is not set")))?,
                ),
                None => None,
            };
            Ok(Box::new(HttpChatBackend::new(arg).with_model(model).with_api_key(api_key)))
        }
        other => Err(LlmError::Config(format!("unknown backend kind `{other}`"))),
    }
}
