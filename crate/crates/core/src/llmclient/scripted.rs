//! Deterministic scripted backend for offline runs and tests.
//!
//! Responses are routed by matching the request prompt (and optionally the
//! caller role) against an ordered route list; the first matching route wins.
//! Routes can inject transient failures to exercise retry paths. Embeddings
//! are seeded pseudo-vectors: the same text always embeds identically.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, CompletionRequest, CompletionResponse, LlmError};

/// Prompt predicate for scripted routing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum PromptMatcher {
    /// Exact match on the full prompt text.
    Exact(String),
    /// Substring containment.
    Contains(String),
    /// Regular-expression search.
    Regex(String),
    /// All sub-matchers must hold.
    AllOf(Vec<PromptMatcher>),
    /// Matches every prompt.
    Any,
}

impl PromptMatcher {
    fn compile(&self) -> Result<CompiledMatcher, LlmError> {
        Ok(match self {
            PromptMatcher::Exact(text) => CompiledMatcher::Exact(text.clone()),
            PromptMatcher::Contains(text) => CompiledMatcher::Contains(text.clone()),
            PromptMatcher::Regex(pattern) => CompiledMatcher::Regex(
                regex::Regex::new(pattern)
                    .map_err(|e| LlmError::Config(format!("bad route regex {pattern:?}: {e}")))?,
            ),
            PromptMatcher::AllOf(parts) => CompiledMatcher::AllOf(
                parts
                    .iter()
                    .map(PromptMatcher::compile)
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            PromptMatcher::Any => CompiledMatcher::Any,
        })
    }
}

enum CompiledMatcher {
    Exact(String),
    Contains(String),
    Regex(regex::Regex),
    AllOf(Vec<CompiledMatcher>),
    Any,
}

impl CompiledMatcher {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            CompiledMatcher::Exact(text) => prompt == text,
            CompiledMatcher::Contains(text) => prompt.contains(text),
            CompiledMatcher::Regex(re) => re.is_match(prompt),
            CompiledMatcher::AllOf(parts) => parts.iter().all(|m| m.matches(prompt)),
            CompiledMatcher::Any => true,
        }
    }
}

/// What a matched route replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResponseScript {
    Reply {
        text: String,
    },
    /// Fail transiently the first `failures` times, then reply.
    FailuresThenReply {
        failures: u32,
        text: String,
    },
    AlwaysFail {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRoute {
    /// Restrict the route to one caller role ("inference", "editor", ...).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    pub matcher: PromptMatcher,
    pub script: ResponseScript,
}

/// Serializable scripted-backend definition (the fixture file format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSpec {
    #[serde(default)]
    pub routes: Vec<ScriptRoute>,
    /// Fallback reply when no route matches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<String>,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub embed_seed: u64,
}

impl Default for ScriptedSpec {
    fn default() -> Self {
        ScriptedSpec {
            routes: Vec::new(),
            default_reply: None,
            embed_dim: default_embed_dim(),
            embed_seed: 0,
        }
    }
}

fn default_embed_dim() -> usize {
    64
}

impl ScriptedSpec {
    pub fn load(path: &std::path::Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            LlmError::Config(format!("cannot read fixtures {}: {e}", path.display()))
        })?;
        serde_json::from_str(&raw)
            .map_err(|e| LlmError::Config(format!("malformed fixtures {}: {e}", path.display())))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), LlmError> {
        let raw = serde_json::to_string_pretty(self).expect("spec serializes");
        std::fs::write(path, raw)
            .map_err(|e| LlmError::Config(format!("cannot write fixtures {}: {e}", path.display())))
    }
}

pub struct ScriptedBackend {
    spec: ScriptedSpec,
    compiled: Vec<CompiledMatcher>,
    hits: Mutex<Vec<u32>>,
}

impl ScriptedBackend {
    pub fn from_spec(spec: ScriptedSpec) -> Result<Self, LlmError> {
        let compiled = spec
            .routes
            .iter()
            .map(|route| route.matcher.compile())
            .collect::<Result<Vec<_>, _>>()?;
        let hits = Mutex::new(vec![0; spec.routes.len()]);
        Ok(ScriptedBackend {
            spec,
            compiled,
            hits,
        })
    }

    /// A backend answering every prompt with the same canned text.
    pub fn constant(text: impl Into<String>) -> Self {
        ScriptedBackend::from_spec(ScriptedSpec {
            default_reply: Some(text.into()),
            ..ScriptedSpec::default()
        })
        .expect("constant spec compiles")
    }

    /// Convenience: route `Contains(pattern) -> text`.
    pub fn with_contains_route(mut self, pattern: &str, text: &str) -> Self {
        self.spec.routes.push(ScriptRoute {
            role: None,
            matcher: PromptMatcher::Contains(pattern.to_string()),
            script: ResponseScript::Reply {
                text: text.to_string(),
            },
        });
        self.compiled
            .push(CompiledMatcher::Contains(pattern.to_string()));
        self.hits.lock().unwrap().push(0);
        self
    }

    pub fn spec(&self) -> &ScriptedSpec {
        &self.spec
    }

    fn pseudo_embedding(&self, text: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.spec.embed_seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let seed = u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vector: Vec<f64> = (0..self.spec.embed_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let norm: f64 = vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut vector {
                *x /= norm;
            }
        }
        vector
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        for (idx, route) in self.spec.routes.iter().enumerate() {
            if let Some(role) = &route.role {
                if role != &request.role {
                    continue;
                }
            }
            if !self.compiled[idx].matches(&request.prompt) {
                continue;
            }
            let hit = {
                let mut hits = self.hits.lock().unwrap();
                hits[idx] += 1;
                hits[idx]
            };
            return match &route.script {
                ResponseScript::Reply { text } => Ok(scripted_response(text, &request.prompt)),
                ResponseScript::FailuresThenReply { failures, text } => {
                    if hit <= *failures {
                        Err(LlmError::Transport {
                            message: format!("scripted transient failure {hit}/{failures}"),
                            retryable: true,
                        })
                    } else {
                        Ok(scripted_response(text, &request.prompt))
                    }
                }
                ResponseScript::AlwaysFail { message } => Err(LlmError::Transport {
                    message: message.clone(),
                    retryable: true,
                }),
            };
        }
        match &self.spec.default_reply {
            Some(text) => Ok(scripted_response(text, &request.prompt)),
            None => Err(LlmError::Transport {
                message: "no scripted route matches the prompt".to_string(),
                retryable: false,
            }),
        }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::Config("embed called with no texts".to_string()));
        }
        Ok(texts.iter().map(|t| self.pseudo_embedding(t)).collect())
    }
}

fn scripted_response(text: &str, prompt: &str) -> CompletionResponse {
    CompletionResponse {
        text: text.to_string(),
        prompt_tokens: prompt.split_whitespace().count(),
        completion_tokens: text.split_whitespace().count(),
        latency_ms: 0,
        retry_count: 0,
    }
}
