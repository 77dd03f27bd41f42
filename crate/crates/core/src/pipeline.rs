//! The staged inference path for one query: retrieve candidates, assemble
//! the selection/filling prompt, call the backend, parse the output.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::callparse::{extract_call_expressions, parse_call_expression, ToolCall};
use crate::llmclient::{Backend, CompletionRequest, LlmError};
use crate::retrieval::{retrieve, RetrievalError, RetrievalIndex};
use crate::tooldoc::{ToolDocument, ToolKnowledgeBase};

/// Prose kept from a model response for editor consumption.
pub const REASONING_EXCERPT_LIMIT: usize = 2_000;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("prompt assembly requires at least one candidate document")]
    NoCandidates,
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// Per-stage verdicts. The pipeline leaves them unset; only the evaluation
/// harness fills them in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StageStatuses {
    pub retrieval: Option<StageStatus>,
    pub selection: Option<StageStatus>,
    pub filling: Option<StageStatus>,
}

/// Everything observed while answering one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOutcome {
    pub query: String,
    /// Ranked `(tool, score)` candidates, best first.
    pub retrieved: Vec<(String, f64)>,
    pub predicted_calls: Vec<ToolCall>,
    pub raw_response: String,
    /// Leading prose from the response, truncated.
    pub reasoning_excerpt: String,
    pub statuses: StageStatuses,
    /// Snapshot the outcome was produced on, for caching.
    pub kb_snapshot_id: String,
    /// Fingerprint of the assembled prompt; outcomes are reusable across
    /// snapshots when this is unchanged.
    pub prompt_sha256: String,
    /// Set when the backend failed after retries; counts as failure at every
    /// stage but is recorded distinctly.
    pub errored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub retry_count: u32,
}

/// Pipeline knobs. Decoding defaults are deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Candidates passed to the model (the retrieval cutoff).
    pub k: usize,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 10,
            model: String::new(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 4096,
        }
    }
}

fn render_tool_block(rank: usize, doc: &ToolDocument) -> String {
    let mut block = format!(
        "Tool {rank}: {}\nDescription: {}\n",
        doc.name, doc.description
    );
    if doc.parameter_schema.is_empty() {
        block.push_str("Parameters: (none)\n");
        return block;
    }
    block.push_str("Parameters:\n");
    for param in &doc.parameter_schema {
        let mut kinds = param.value_kind.as_str().to_string();
        for alt in &param.alternate_kinds {
            kinds.push('|');
            kinds.push_str(alt.as_str());
        }
        let requirement = if param.required {
            "required"
        } else {
            "optional"
        };
        let mut line = format!("- {} ({kinds}, {requirement})", param.name);
        if let Some(default) = &param.default_value {
            line.push_str(&format!(", default: {}", default.to_json()));
        }
        if !param.description.is_empty() {
            line.push_str(&format!(": {}", param.description));
        }
        if !param.example_values.is_empty() {
            let examples: Vec<String> = param
                .example_values
                .iter()
                .map(|v| v.to_json().to_string())
                .collect();
            line.push_str(&format!(" Examples: {}", examples.join(", ")));
        }
        line.push('\n');
        block.push_str(&line);
    }
    block
}

/// Renders the inference prompt: one block per candidate in retrieval rank
/// order (description and full parameter schema), the query, and the
/// structured-output instruction. Byte-deterministic in its inputs.
pub fn assemble_prompt(candidates: &[&ToolDocument], query: &str) -> Result<String, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    let mut prompt = String::from(
        "You are a tool-calling assistant. Select the tool call or calls that answer the user \
         query, using only the tools listed below.\n\nAvailable tools:\n\n",
    );
    for (idx, doc) in candidates.iter().enumerate() {
        prompt.push_str(&render_tool_block(idx + 1, doc));
        prompt.push('\n');
    }
    prompt.push_str(&format!("User query: {query}\n\n"));
    prompt.push_str(
        "Respond with a JSON array of tool calls, one object per call, exactly in the form:\n\
         [{\"name\": \"<tool name>\", \"arguments\": {\"<parameter>\": <value>}}]\n\
         Output only the JSON array.\n",
    );
    Ok(prompt)
}

pub fn prompt_fingerprint(prompt: &str) -> String {
    let digest = Sha256::digest(prompt.as_bytes());
    crate::tooldoc::hex_prefix(&digest, 32)
}

/// Splits a raw response into parsed calls plus a prose excerpt. A response
/// that is nothing but calls has no reasoning to excerpt.
fn digest_response(raw: &str) -> (Vec<ToolCall>, String) {
    if let Ok(calls) = parse_call_expression(raw) {
        return (calls, String::new());
    }
    let calls = extract_call_expressions(raw);
    let excerpt: String = raw.chars().take(REASONING_EXCERPT_LIMIT).collect();
    (calls, excerpt.trim().to_string())
}

/// Runs one query end to end. Backend failures after retries produce an
/// errored outcome instead of an error: the harness scores them as failures
/// at every stage.
pub fn run_query(
    kb: &ToolKnowledgeBase,
    index: &RetrievalIndex,
    query: &str,
    backend: &dyn Backend,
    cfg: &PipelineConfig,
) -> Result<InferenceOutcome, PipelineError> {
    let retrieved = retrieve(index, query, cfg.k)?;
    let candidates: Vec<&ToolDocument> = retrieved
        .iter()
        .filter_map(|(name, _)| kb.get(name))
        .collect();

    let mut outcome = InferenceOutcome {
        query: query.to_string(),
        retrieved,
        predicted_calls: Vec::new(),
        raw_response: String::new(),
        reasoning_excerpt: String::new(),
        statuses: StageStatuses::default(),
        kb_snapshot_id: kb.snapshot_id.clone(),
        prompt_sha256: String::new(),
        errored: false,
        error_message: None,
        retry_count: 0,
    };
    if candidates.is_empty() {
        return Ok(outcome);
    }

    let prompt = assemble_prompt(&candidates, query)?;
    outcome.prompt_sha256 = prompt_fingerprint(&prompt);
    let request = CompletionRequest {
        model: cfg.model.clone(),
        prompt,
        temperature: cfg.temperature,
        top_p: cfg.top_p,
        max_tokens: cfg.max_tokens,
        role: "inference".to_string(),
    };
    match backend.complete(&request) {
        Ok(response) => {
            let (calls, excerpt) = digest_response(&response.text);
            outcome.predicted_calls = calls;
            outcome.reasoning_excerpt = excerpt;
            outcome.raw_response = response.text;
            outcome.retry_count = response.retry_count;
        }
        Err(err @ (LlmError::ExhaustedRetries { .. } | LlmError::Transport { .. }))
        | Err(err @ LlmError::EmptyResponse) => {
            outcome.errored = true;
            outcome.error_message = Some(err.to_string());
        }
        Err(err) => {
            outcome.errored = true;
            outcome.error_message = Some(err.to_string());
        }
    }
    Ok(outcome)
}
