//! Chat-completion client abstraction and tolerant JSON extraction from
//! model replies.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::http::{env_key, JsonClient, RetryPolicy};

pub const LLM_KEY_VAR: &str = "MERIT_LLM_API_KEY";

const REPROMPT: &str = "Your previous reply could not be parsed. Respond with only the strict JSON object described above, with every required field.";

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

/// A chat model. Implementations must tolerate concurrent calls.
pub trait ChatClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage]) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Extra attempts after an unparseable reply.
    pub max_reprompts: u32,
    pub concurrency: usize,
    pub retry: RetryPolicy,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://localhost:8080/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 1024,
            max_reprompts: 2,
            concurrency: 4,
            retry: RetryPolicy::default(),
        }
    }
}

/// OpenAI-style `/chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    cfg: LlmConfig,
    client: JsonClient,
    name: String,
}

impl HttpChatClient {
    /// Reads the API key from `MERIT_LLM_API_KEY`.
    pub fn new(cfg: LlmConfig) -> Result<Self> {
        Self::with_key(cfg, env_key(LLM_KEY_VAR))
    }

    pub fn with_key(cfg: LlmConfig, api_key: Option<String>) -> Result<Self> {
        let client = JsonClient::new(cfg.endpoint.clone(), api_key, cfg.retry)?;
        let name = format!("chat:{}", cfg.model);
        Ok(HttpChatClient { cfg, client, name })
    }
}

impl ChatClient for HttpChatClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "response_format": { "type": "json_object" },
        });
        let resp = self.client.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::MalformedResponse("missing choices[0].message.content".into()))
    }
}

/// Replays canned replies in order, repeating the last one; records every
/// conversation it was sent. For tests and offline demos.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    replies: Vec<String>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChat {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedChat {
            replies: replies.into_iter().map(Into::into).collect(),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().expect("poisoned").clone()
    }
}

impl ChatClient for ScriptedChat {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String> {
        let mut calls = self.calls.lock().expect("poisoned");
        let i = calls.len().min(self.replies.len().saturating_sub(1));
        calls.push(messages.to_vec());
        self.replies
            .get(i)
            .cloned()
            .ok_or_else(|| Error::ProviderUnavailable("scripted client has no replies".into()))
    }
}

/// First balanced `{...}` in `text` that parses as a JSON object. Braces
/// inside string literals are skipped, so surrounding prose and code fences
/// are tolerated.
pub fn extract_json_object(text: &str) -> Option<Map<String, Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        let mut end = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let end = end?;
        if let Ok(Value::Object(map)) = serde_json::from_str(&text[open..=end]) {
            return Some(map);
        }
        start = open + 1;
    }
    None
}

/// Reads a probability from a number or a numeric string (`"0.35"`, `"35%"`).
pub fn coerce_probability(v: &Value) -> Option<f64> {
    let p = match v {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => {
            let s = s.trim();
            match s.strip_suffix('%') {
                Some(pct) => pct.trim().parse::<f64>().ok()? / 100.0,
                None => s.parse().ok()?,
            }
        }
        _ => return None,
    };
    (p.is_finite() && (0.0..=1.0).contains(&p)).then_some(p)
}

/// Sends `prompt`, parsing the reply with `parse`. An unparseable reply is
/// answered with a corrective message, up to `max_reprompts` times, before
/// giving up with `MalformedResponse`. Provider errors are not retried here.
pub fn ask_json<T>(
    client: &dyn ChatClient,
    prompt: &str,
    max_reprompts: u32,
    parse: impl Fn(&Map<String, Value>) -> std::result::Result<T, String>,
) -> Result<T> {
    let mut messages = vec![ChatMessage::user(prompt)];
    let mut last = String::new();
    for _ in 0..=max_reprompts {
        let reply = client.complete(&messages)?;
        match extract_json_object(&reply) {
            Some(obj) => match parse(&obj) {
                Ok(v) => return Ok(v),
                Err(e) => last = e,
            },
            None => last = "no JSON object in reply".into(),
        }
        tracing::debug!(client = client.name(), error = %last, "unparseable reply");
        messages.push(ChatMessage::assistant(reply));
        messages.push(ChatMessage::user(REPROMPT));
    }
    Err(Error::MalformedResponse(last))
}
