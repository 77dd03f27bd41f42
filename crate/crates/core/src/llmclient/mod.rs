//! Backend abstraction for chat completion and embeddings.
//!
//! Callers talk to a [`Backend`]; the concrete implementations are an HTTP
//! JSON client for hosted endpoints, a deterministic scripted backend for
//! tests and offline runs, and a throttling wrapper that enforces the
//! concurrency ceiling, rolling request-rate window, and retry policy.

mod http;
mod scripted;
mod throttle;

pub use http::{HttpBackend, HttpBackendConfig};
pub use scripted::{PromptMatcher, ResponseScript, ScriptRoute, ScriptedBackend, ScriptedSpec};
pub use throttle::{
    Admission, Clock, SimulatedClock, SystemClock, ThrottleGate, ThrottlePolicy, ThrottleState,
    ThrottledBackend,
};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("backend returned an empty response")]
    EmptyResponse,
    #[error("retries exhausted after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("embedding dimension drift: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Transport {
                retryable: true,
                ..
            }
        )
    }
}

/// A chat completion request. Decoding defaults are deterministic
/// (temperature 0, top-p 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Caller role used by scripted routing, e.g. "inference" or "editor".
    pub role: String,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            model: String::new(),
            prompt: prompt.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 4096,
            role: "inference".to_string(),
        }
    }

    pub fn with_role(mut self, role: impl Into<String>) -> Self {
        self.role = role.into();
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
    pub latency_ms: u64,
    /// Transient failures absorbed before this response was produced.
    pub retry_count: u32,
}

impl CompletionResponse {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        CompletionResponse {
            completion_tokens: text.split_whitespace().count(),
            text,
            prompt_tokens: 0,
            latency_ms: 0,
            retry_count: 0,
        }
    }
}

/// Chat-and-embeddings backend. Implementations must be safe for concurrent
/// callers.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let _ = texts;
        Err(LlmError::Unsupported("embeddings".to_string()))
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        (**self).complete(request)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        (**self).embed(texts)
    }
}

/// Cosine similarity; zero vectors score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
