use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, LlmError};

/// Single-turn POST to a chat-completions style endpoint.
///
/// Request body: `{"model", "messages": [{"role": "user", "content"}],
/// "temperature", "max_tokens"}`. The reply text is taken from
/// `choices[0].message.content`, then `content[0].text`; any other body is
/// returned verbatim.
pub struct HttpChatBackend {
    url: String,
    model: Option<String>,
    api_key: Option<String>,
    timeout: Duration,
    // built on first use: the blocking client must not be created inside an
    // async context
    client: Option<reqwest::blocking::Client>,
}

impl HttpChatBackend {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            api_key: None,
            timeout: Duration::from_secs(300),
            client: None,
        }
    }

    pub fn with_model(mut self, model: Option<String>) -> Self {
        self.model = model;
        self
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn client(&mut self) -> Result<&reqwest::blocking::Client, LlmError> {
        if self.client.is_none() {
            let client = reqwest::blocking::Client::builder()
                .timeout(self.timeout)
                .build()
                .map_err(|e| LlmError::Config(e.to_string()))?;
            self.client = Some(client);
        }
        Ok(self.client.as_ref().expect("just set"))
    }
}

fn extract_text(body: &str) -> String {
    let Ok(value) = serde_json::from_str::<Value>(body) else {
        return body.to_owned();
    };
    value
        .pointer("/choices/0/message/content")
        .or_else(|| value.pointer("/content/0/text"))
        .and_then(Value::as_str)
        .map(str::to_owned)
        .unwrap_or_else(|| body.to_owned())
}

impl ChatBackend for HttpChatBackend {
    fn complete(&mut self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut body = json!({
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(model) = &self.model {
            body["model"] = json!(model);
        }
        let url = self.url.clone();
        let key = self.api_key.clone();
        let client = self.client()?;
        let mut call = client.post(&url).json(&body);
        if let Some(key) = key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| LlmError::Unavailable(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Unavailable(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LlmError::Unavailable(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(LlmError::Rejected(format!("{status}: {text}")));
        }
        Ok(extract_text(&text))
    }

    fn describe(&self) -> String {
        format!("http-chat:{}", self.url)
    }
}
