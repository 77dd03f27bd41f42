//! Minimal HTTP JSON chat-completion client.
//!
//! Speaks a small OpenAI-compatible shape and tolerates the common response
//! layouts, so hosted providers can be pointed at without touching callers.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Chat completions endpoint URL.
    pub endpoint: String,
    /// Embeddings endpoint URL, if embeddings are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_endpoint: Option<String>,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_model: Option<String>,
    /// Name of the environment variable holding the bearer token. The key
    /// itself never appears in config files or artifacts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let api_key =
            match &config.api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    LlmError::Auth(format!("environment variable {var} is not set"))
                })?),
                None => None,
            };
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(format!("cannot build http client: {e}")))?;
        Ok(HttpBackend {
            config,
            client,
            api_key,
        })
    }

    fn post(&self, url: &str, body: serde_json::Value) -> Result<serde_json::Value, LlmError> {
        let mut request = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| LlmError::Transport {
            message: format!("request to {url} failed: {e}"),
            retryable: true,
        })?;
        let status = response.status();
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            let message = format!("{url} returned {status}: {body}");
            return Err(match status.as_u16() {
                401 | 403 => LlmError::Auth(message),
                429 => LlmError::Transport {
                    message,
                    retryable: true,
                },
                s if s >= 500 => LlmError::Transport {
                    message,
                    retryable: true,
                },
                _ => LlmError::Config(message),
            });
        }
        response.json().map_err(|e| LlmError::Transport {
            message: format!("malformed JSON from {url}: {e}"),
            retryable: false,
        })
    }
}

/// Pulls the completion text out of the common response layouts.
fn extract_text(body: &serde_json::Value) -> Option<String> {
    if let Some(text) = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .and_then(|t| t.as_str())
    {
        return Some(text.to_string());
    }
    if let Some(text) = body
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("text"))
        .and_then(|t| t.as_str())
    {
        return Some(text.to_string());
    }
    if let Some(text) = body
        .get("content")
        .and_then(|c| c.get(0))
        .and_then(|b| b.get("text"))
        .and_then(|t| t.as_str())
    {
        return Some(text.to_string());
    }
    body.get("text")
        .and_then(|t| t.as_str())
        .map(str::to_string)
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let model = if request.model.is_empty() {
            &self.config.model
        } else {
            &request.model
        };
        let started = std::time::Instant::now();
        let body = self.post(
            &self.config.endpoint,
            json!({
                "model": model,
                "messages": [{"role": "user", "content": request.prompt}],
                "temperature": request.temperature,
                "top_p": request.top_p,
                "max_tokens": request.max_tokens,
            }),
        )?;
        let text = extract_text(&body).ok_or(LlmError::EmptyResponse)?;
        let usage = body.get("usage");
        let read_usage = |key: &str| -> usize {
            usage
                .and_then(|u| u.get(key))
                .and_then(|v| v.as_u64())
                .unwrap_or(0) as usize
        };
        Ok(CompletionResponse {
            text,
            prompt_tokens: read_usage("prompt_tokens"),
            completion_tokens: read_usage("completion_tokens"),
            latency_ms: started.elapsed().as_millis() as u64,
            retry_count: 0,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let endpoint = self
            .config
            .embeddings_endpoint
            .as_ref()
            .ok_or_else(|| LlmError::Config("no embeddings endpoint configured".to_string()))?;
        let model = self
            .config
            .embeddings_model
            .as_deref()
            .unwrap_or(&self.config.model);
        let body = self.post(endpoint, json!({"model": model, "input": texts}))?;
        let data =
            body.get("data")
                .and_then(|d| d.as_array())
                .ok_or_else(|| LlmError::Transport {
                    message: "embeddings response has no data array".to_string(),
                    retryable: false,
                })?;
        let mut vectors = Vec::with_capacity(data.len());
        for item in data {
            let values = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| LlmError::Transport {
                    message: "embeddings entry has no embedding array".to_string(),
                    retryable: false,
                })?;
            let vector: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
            if let Some(first) = vectors.first() {
                let expected = Vec::len(first);
                if vector.len() != expected {
                    return Err(LlmError::DimensionDrift {
                        expected,
                        got: vector.len(),
                    });
                }
            }
            vectors.push(vector);
        }
        Ok(vectors)
    }
}
