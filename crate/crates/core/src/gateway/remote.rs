use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendKind, ChatBackend, ChatRequest};
use crate::error::GatewayError;

pub const DEFAULT_MODEL: &str = "gpt-4.1";

/// Capped exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_secs(1),
            max_delay: Duration::from_secs(4),
        }
    }
}

impl RetryPolicy {
    /// Delay after the `attempt`-th failure (0-based): base, 2·base, 4·base, ... capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay
            .checked_mul(factor)
            .unwrap_or(self.max_delay)
            .min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL; requests go to `<api_base>/chat/completions`.
    pub api_base: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    /// Reads `LLM_API_BASE`, `LLM_API_KEY` and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let api_base = std::env::var("LLM_API_BASE")
            .map_err(|_| GatewayError::InvalidRequest("LLM_API_BASE is not set".into()))?;
        Ok(Self {
            api_base,
            api_key: std::env::var("LLM_API_KEY").ok().filter(|k| !k.is_empty()),
            model: std::env::var("LLM_MODEL").unwrap_or_else(|_| DEFAULT_MODEL.to_string()),
            timeout: Duration::from_secs(300),
            retry: RetryPolicy::default(),
        })
    }
}

/// Client for an OpenAI-style chat-completions endpoint.
pub struct RemoteBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", config.api_base.trim_end_matches('/')),
            api_key: config.api_key,
            retry: config.retry,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String, GatewayError> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key).header("api-key", key);
        }
        let resp = req
            .send()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        if !status.is_success() {
            let mut detail = text;
            detail.truncate(500);
            return Err(GatewayError::Status {
                status: status.as_u16(),
                detail,
            });
        }
        extract_content(&text)
    }
}

/// Pulls `choices[0].message.content` out of a response body.
pub(crate) fn extract_content(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Decode(e.to_string()))?;
    let message = v
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| GatewayError::Decode("missing choices[0].message".into()))?;
    match message.get("content") {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) | None => Ok(String::new()),
        Some(other) => Err(GatewayError::Decode(format!("content is not a string: {other}"))),
    }
}

pub(crate) fn request_body(request: &ChatRequest) -> Value {
    json!({
        "model": request.model_id,
        "messages": request.messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    })
}

impl ChatBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn send(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let body = request_body(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(e) if e.is_transient() && attempt + 1 < self.retry.max_attempts => {
                    let delay = self.retry.delay(attempt);
                    tracing::warn!(stage = %request.stage, attempt, ?delay, error = %e, "retrying");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
