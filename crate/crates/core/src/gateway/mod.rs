//! Chat-completion access with interchangeable backends.
//!
//! A [`Gateway`] owns one upstream [`ChatBackend`] (remote HTTP, scripted
//! queues, or a closure stub), an optional on-disk [`ResponseCache`], and a
//! [`CallLedger`] counting invocations per pipeline stage. With no upstream
//! and a cache it acts as a cache-only replay backend.

mod cache;
mod ledger;
mod remote;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ResponseCache;
pub use ledger::CallLedger;
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy, DEFAULT_MODEL};
pub use scripted::{ScriptedBackend, StubBackend};

use crate::error::GatewayError;
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Disambiguates otherwise identical requests (one per self-consistency run).
    pub seed_tag: String,
    /// Ledger label of the calling pipeline stage. Not part of the cache key.
    pub stage: String,
    /// Case id of the caller; scripted backends prefer a case-scoped queue.
    pub scope: Option<String>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over (model, messages, temperature, max_tokens, seed_tag).
    pub fn cache_key(&self) -> String {
        #[derive(Serialize)]
        struct KeyMaterial<'a> {
            model_id: &'a str,
            messages: &'a [ChatMessage],
            temperature: f64,
            max_tokens: u32,
            seed_tag: &'a str,
        }
        let material = serde_json::to_vec(&KeyMaterial {
            model_id: &self.model_id,
            messages: &self.messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed_tag: &self.seed_tag,
        })
        .expect("key material serializes");
        hex::encode(Sha256::digest(material))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
    Cache,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
}

/// An upstream source of completions.
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn send(&self, request: &ChatRequest) -> Result<String, GatewayError>;

    /// True when replies depend on call order (FIFO scripts); callers then
    /// avoid concurrent fan-out so runs stay reproducible.
    fn order_sensitive(&self) -> bool {
        false
    }
}

pub struct Gateway {
    backend: Option<Arc<dyn ChatBackend>>,
    cache: Option<ResponseCache>,
    ledger: CallLedger,
    upstream_calls: AtomicU64,
    model_id: String,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend: Some(backend),
            cache: None,
            ledger: CallLedger::default(),
            upstream_calls: AtomicU64::new(0),
            model_id: DEFAULT_MODEL.to_string(),
        }
    }

    /// Serves only what `cache` already holds; misses are errors.
    pub fn cache_only(cache: ResponseCache) -> Self {
        Self {
            backend: None,
            cache: Some(cache),
            ledger: CallLedger::default(),
            upstream_calls: AtomicU64::new(0),
            model_id: DEFAULT_MODEL.to_string(),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    /// Calls that reached the upstream backend (cache misses).
    pub fn upstream_calls(&self) -> u64 {
        self.upstream_calls.load(Ordering::SeqCst)
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.as_ref().map_or(BackendKind::Cache, |b| b.kind())
    }

    /// Sequential when the backend is order-sensitive, otherwise the default.
    pub fn execution(&self) -> Execution {
        if self.backend.as_ref().is_some_and(|b| b.order_sensitive()) {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.ledger.record(&request.stage);
        request.validate()?;
        let started = Instant::now();
        let key = self.cache.as_ref().map(|_| request.cache_key());
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(content) = cache.get(key)? {
                tracing::trace!(stage = %request.stage, key = %key, "cache hit");
                return Ok(ChatResponse {
                    content,
                    backend: BackendKind::Cache,
                    latency_ms: started.elapsed().as_millis() as u64,
                });
            }
        }
        let Some(backend) = &self.backend else {
            return Err(GatewayError::CacheMiss {
                key: key.unwrap_or_default(),
            });
        };
        self.upstream_calls.fetch_add(1, Ordering::SeqCst);
        let content = backend.send(request)?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &content)?;
        }
        Ok(ChatResponse {
            content,
            backend: backend.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Completes every request, returning per-request outcomes in input order.
    pub fn complete_each(
        &self,
        requests: &[ChatRequest],
        parallelism: usize,
    ) -> Vec<Result<ChatResponse, GatewayError>> {
        self.execution()
            .map_bounded(requests, parallelism.max(1), |r| self.complete(r))
    }

    /// Completes every request in input order; any failure fails the batch.
    ///
    /// Successful members are still cached, so a retry only re-issues the
    /// failed ones.
    pub fn complete_many(
        &self,
        requests: &[ChatRequest],
        parallelism: usize,
    ) -> Result<Vec<ChatResponse>, GatewayError> {
        if parallelism == 0 {
            return Err(GatewayError::InvalidRequest("parallelism must be at least 1".into()));
        }
        let outcomes = self.complete_each(requests, parallelism);
        let mut failed = Vec::new();
        let mut first = None;
        let mut ok = Vec::with_capacity(outcomes.len());
        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(r) => ok.push(r),
                Err(e) => {
                    failed.push(i);
                    first.get_or_insert(e);
                }
            }
        }
        match first {
            None => Ok(ok),
            Some(first) => Err(GatewayError::Batch {
                total: requests.len(),
                failed,
                first: Box::new(first),
            }),
        }
    }
}

#[cfg(test)]
pub(crate) fn test_request(stage: &str, text: &str, seed: &str) -> ChatRequest {
    ChatRequest {
        model_id: "test-model".into(),
        messages: vec![ChatMessage::user(text)],
        temperature: 0.7,
        max_tokens: 100,
        seed_tag: seed.into(),
        stage: stage.into(),
        scope: None,
    }
}
