//! Chat-completion client: one user message per request, temperature 0.

use std::thread;
use std::time::Duration;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Environment variable holding the bearer token for the remote endpoint.
pub const API_KEY_ENV: &str = "GOOD_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatError {
    pub retryable: bool,
    pub message: String,
}

impl ChatError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self {
            retryable: true,
            message: message.into(),
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            retryable: false,
            message: message.into(),
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, model: &str, prompt: &str) -> Result<ChatReply, ChatError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential delay before retry number `attempt` (0-based), plus up to
    /// 50% random jitter.
    pub fn delay(&self, attempt: u32) -> Duration {
        let base = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        let jitter = if base > 0 { rand::rng().random_range(0..=base / 2) } else { 0 };
        Duration::from_millis(base + jitter)
    }
}

/// Calls the backend, retrying transient failures with backoff.
pub fn complete_with_retry(
    backend: &dyn ChatBackend,
    model: &str,
    prompt: &str,
    policy: &RetryPolicy,
) -> Result<ChatReply, ChatError> {
    let mut attempt = 0;
    loop {
        match backend.complete(model, prompt) {
            Ok(r) => return Ok(r),
            Err(e) if e.retryable && attempt < policy.max_retries => {
                warn!("chat request failed (attempt {}): {}", attempt + 1, e.message);
                thread::sleep(policy.delay(attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct HttpChatBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl HttpChatBackend {
    pub fn new(base_url: &str, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.into(),
        }
    }

    /// `None` when `GOOD_API_KEY` is unset or empty.
    pub fn from_env(base_url: &str, timeout: Duration) -> Option<Self> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .map(|k| Self::new(base_url, k, timeout))
    }

    pub fn request_body(model: &str, prompt: &str) -> Value {
        json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, model: &str, prompt: &str) -> Result<ChatReply, ChatError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(Self::request_body(model, prompt))
            .map_err(|e| ChatError::transient(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(ChatError::transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ChatError::fatal(format!("HTTP {status}: {body}")));
        }
        let body: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ChatError::transient(format!("bad response body: {e}")))?;
        parse_completion(&body)
    }
}

/// Extracts the first choice's content and the token usage.
pub fn parse_completion(body: &Value) -> Result<ChatReply, ChatError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ChatError::fatal(format!("response has no message content: {body}")))?;
    let tokens = |key: &str| body.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatReply {
        content: content.to_string(),
        prompt_tokens: tokens("prompt_tokens"),
        completion_tokens: tokens("completion_tokens"),
    })
}
