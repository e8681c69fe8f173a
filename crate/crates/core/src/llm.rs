//! Chat-completion backends shared by the LLM planner and allocator.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Re-prompts appended with parse diagnostics before giving up.
pub const DEFAULT_MAX_REPAIRS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned an unusable response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

/// Chat-completions client (`POST <endpoint>` with `{model, messages}`),
/// reading `choices[0].message.content` from the response.
pub struct HttpChatBackend {
    endpoint: String,
    model: String,
    agent: ureq::Agent,
}

impl HttpChatBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        HttpChatBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            agent,
        }
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))
    }
}

/// Replays canned responses in order, repeating the last one once the
/// queue runs dry. Every prompt it receives is recorded.
#[derive(Default)]
pub struct ReplayBackend {
    responses: Mutex<VecDeque<String>>,
    last: Mutex<Option<String>>,
    prompts: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ReplayBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ReplayBackend {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            ..Default::default()
        }
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.prompts.lock().unwrap().push(messages.to_vec());
        let next = self.responses.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        match next {
            Some(r) => {
                *last = Some(r.clone());
                Ok(r)
            }
            None => last
                .clone()
                .ok_or_else(|| BackendError::Unavailable("no recorded responses".into())),
        }
    }
}

/// Substitutes `{name}` placeholders.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Pulls the outermost JSON object out of a model reply, tolerating code
/// fences and chatter around it.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

pub fn repair_message(diagnostics: &str) -> ChatMessage {
    ChatMessage::user(format!(
        "Your previous response could not be used: {diagnostics}\n\
         Reply again with only the corrected JSON object."
    ))
}
