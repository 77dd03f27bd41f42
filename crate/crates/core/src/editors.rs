//! Guided-instruction editor frontends for the three context levels.
//!
//! Each editor receives a structured system prompt with a fixed section
//! order: task description, input data (current contents plus mismatch
//! records), analysis task, common issues, output format, requirements, a
//! prior-edit history, and in-context learning examples last. The section
//! headers, issue bullets, and requirements are part of the editing protocol
//! and must render byte-identically; golden tests pin them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::evalharness::MismatchRecord;
use crate::llmclient::{Backend, CompletionRequest, LlmError};
use crate::tooldoc::{validate_parameters, Level, LevelContent, ToolDocument, ToolKnowledgeBase};

/// Prior proposals kept in the state section.
pub const STATE_WINDOW: usize = 10;
/// Parse-failure retries before an editor call is skipped.
pub const PARSE_RETRIES: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum EditorError {
    #[error("no mismatch records supplied")]
    EmptyMismatches,
    #[error("mismatch at level {found} passed to the {expected} editor")]
    LevelMismatch { expected: Level, found: Level },
    #[error(transparent)]
    Parse(#[from] EditorParseError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("summarization backend returned an empty summary")]
    EmptySummary,
}

#[derive(Debug, thiserror::Error)]
pub enum EditorParseError {
    #[error("missing ANALYSIS section in editor output: {raw:?}")]
    MissingAnalysis { raw: String },
    #[error("missing IMPROVED section in editor output: {raw:?}")]
    MissingImproved { raw: String },
    #[error("no JSON value after the IMPROVED header: {raw:?}")]
    MissingJson { raw: String },
    #[error("malformed JSON in editor output: {message}: {raw:?}")]
    MalformedJson { message: String, raw: String },
    #[error("unusable modification entry: {message}: {raw:?}")]
    InvalidEntry { message: String, raw: String },
}

/// One editor proposal: analysis plus whole-value replacements per tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditProposal {
    pub level: Level,
    pub analysis: String,
    pub modifications: BTreeMap<String, LevelContent>,
    pub source_mismatches: Vec<MismatchRecord>,
    pub pre_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepted: Option<bool>,
}

/// Outcome of a past proposal, summarized for the state section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditHistoryEntry {
    pub tools: Vec<String>,
    pub pre_score: f64,
    pub post_score: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IclOutcome {
    Accepted,
    Rejected,
}

/// A before/after editing example shown to the editor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclExample {
    pub level: Level,
    pub before: serde_json::Value,
    pub after: serde_json::Value,
    pub outcome: IclOutcome,
}

/// Curated seed examples embedded in the crate.
pub fn seed_icl_examples() -> Vec<IclExample> {
    serde_json::from_str(include_str!("../assets/icl_seed.json")).expect("embedded ICL seed parses")
}

/// Loads an ICL fixture file: a JSON array of `{level, before, after,
/// outcome}` objects.
pub fn load_icl_examples(path: &std::path::Path) -> Result<Vec<IclExample>, EditorError> {
    let raw = std::fs::read_to_string(path).map_err(|e| {
        EditorError::Backend(LlmError::Config(format!(
            "cannot read ICL fixtures {}: {e}",
            path.display()
        )))
    })?;
    serde_json::from_str(&raw).map_err(|e| {
        EditorError::Backend(LlmError::Config(format!(
            "malformed ICL fixtures {}: {e}",
            path.display()
        )))
    })
}

struct LevelTemplate {
    title: &'static str,
    task_description: &'static str,
    contents_label: &'static str,
    mismatches_label: &'static str,
    analysis_task: &'static str,
    issues_header: &'static str,
    issues: &'static [&'static str],
    output_format: [&'static str; 2],
    improved_header: &'static str,
    requirements: &'static [&'static str],
}

fn template(level: Level) -> &'static LevelTemplate {
    match level {
        Level::Retrieval => &RETRIEVAL_TEMPLATE,
        Level::Tool => &TOOL_TEMPLATE,
        Level::Parameter => &PARAMETER_TEMPLATE,
    }
}

static RETRIEVAL_TEMPLATE: LevelTemplate = LevelTemplate {
    title: "Retrieval Optimization Editor",
    task_description: "You are an expert in optimizing knowledge base tool retrieval contents \
                       for retrieval-augmented language models. Your task is to analyze \
                       retrieval mismatches and improve KB retrieval contents to prevent \
                       retrieval errors.",
    contents_label: "Current KB Retrieval Contents:",
    mismatches_label: "Retrieval Mismatch Examples (query, expected_tools, retrieved_tools, \
                       retrieval_response):",
    analysis_task: "Analyze each retrieval mismatch example. Identify patterns in why the KB \
                    retrieves or selects incorrect tools. Determine which KB tool contents \
                    require refinement. Focus on clarity, specificity, and distinguishing \
                    information that improves retrieval recall rate.",
    issues_header: "Common Retrieval Issues:",
    issues: &[
        "Ambiguous or overlapping KB tool descriptions",
        "Missing concrete use cases or negative examples",
        "Unclear distinctions between similar tools",
        "Incomplete parameter or context details",
        "Insufficient guidance on when and why to use each tool",
    ],
    output_format: [
        "ANALYSIS — Detailed analysis of retrieval issues and reasoning for improvements.",
        "IMPROVED KB TOOL DESCRIPTIONS — Updated KB retrieval contents in JSON format with \
         headers: 'name', 'retrieval content'.",
    ],
    improved_header: "IMPROVED KB TOOL DESCRIPTIONS",
    requirements: &[
        "Only modify retrieval contents for tools in mismatch examples",
        "Keep all other retrieval contents unchanged",
        "Add examples and clarify distinctions",
        "Maintain retrieval consistency with prior optimizations",
    ],
};

static TOOL_TEMPLATE: LevelTemplate = LevelTemplate {
    title: "Tool Selection Optimization Editor",
    task_description: "You are an expert in optimizing tool descriptions for tool-use language \
                       models. Your task is to analyze tool mismatches and improve tool \
                       descriptions to prevent these errors.",
    contents_label: "Current Tool Descriptions:",
    mismatches_label: "Tool Mismatch Examples (query, expected_tools, actual_tools, \
                       model_response):",
    analysis_task: "Analyze each mismatch example. Identify why the model selects wrong tools \
                    and determine which descriptions require improvement.",
    issues_header: "Common Tool Selection Issues:",
    issues: &[
        "Ambiguous tool descriptions",
        "Missing key use cases or examples",
        "Overlapping functionality between tools",
        "Unclear parameter requirements",
        "Missing context about when to use each tool",
    ],
    output_format: [
        "ANALYSIS — Detailed analysis of tool selection errors and rationale for each \
         improvement.",
        "IMPROVED TOOL DESCRIPTIONS — Updated tool descriptions in JSON format with headers: \
         'name', 'description'.",
    ],
    improved_header: "IMPROVED TOOL DESCRIPTIONS",
    requirements: &[
        "Modify only tools appearing in mismatch examples",
        "Maintain clarity, specificity, and distinguishing features",
        "Include examples for complex tools",
    ],
};

static PARAMETER_TEMPLATE: LevelTemplate = LevelTemplate {
    title: "Parameter Filling Optimization Editor",
    task_description: "You are an expert in optimizing parameter descriptions to improve \
                       parameter filling accuracy in tool-use language models. Your task is to \
                       analyze parameter mismatches and enhance input schema clarity.",
    contents_label: "Current Tool Input Schemas:",
    mismatches_label: "Parameter Mismatch Examples (query, param_coverage_ratio, \
                       param_all_match, tools_schema_expected, tools_schema_actual):",
    analysis_task: "Analyze each parameter mismatch, identify the cause, and refine schema \
                    descriptions and examples.",
    issues_header: "Common Parameter Issues:",
    issues: &[
        "Incorrect parameter types or formats",
        "Missing required parameters",
        "Misunderstood parameter meanings",
        "Confusion between similar parameters",
    ],
    output_format: [
        "ANALYSIS — Explanation of parameter filling errors and reasoning for schema changes.",
        "IMPROVED TOOL DESCRIPTIONS — Updated tool schemas in JSON format with headers: 'name', \
         'tools'.",
    ],
    improved_header: "IMPROVED TOOL DESCRIPTIONS",
    requirements: &[
        "Modify only mismatched parameter schemas",
        "Clarify parameter purpose, type, and required status",
        "Add usage examples and specify expected formats",
    ],
};

/// Tool names mentioned anywhere in a mismatch record.
pub fn tools_in_mismatch(record: &MismatchRecord) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let mut absorb = |value: &serde_json::Value| match value {
        serde_json::Value::String(s) => {
            names.insert(s.clone());
        }
        serde_json::Value::Array(items) => {
            for item in items {
                match item {
                    serde_json::Value::String(s) => {
                        names.insert(s.clone());
                    }
                    serde_json::Value::Object(obj) => {
                        if let Some(serde_json::Value::String(name)) = obj.get("name") {
                            names.insert(name.clone());
                        }
                    }
                    _ => {}
                }
            }
        }
        _ => {}
    };
    absorb(&record.expected);
    absorb(&record.actual);
    names
}

fn current_contents_json(level: Level, kb: &ToolKnowledgeBase, tools: &BTreeSet<String>) -> String {
    let entries: Vec<serde_json::Value> = tools
        .iter()
        .filter_map(|name| kb.get(name))
        .map(|doc| match level {
            Level::Retrieval => serde_json::json!({
                "name": doc.name,
                "retrieval content": doc.retrieval_content,
            }),
            Level::Tool => serde_json::json!({
                "name": doc.name,
                "description": doc.description,
            }),
            Level::Parameter => serde_json::json!({
                "name": doc.name,
                "parameters": doc.parameter_schema,
            }),
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("contents serialize")
}

fn mismatches_json(level: Level, mismatches: &[MismatchRecord]) -> String {
    let entries: Vec<serde_json::Value> = mismatches
        .iter()
        .map(|m| match level {
            Level::Retrieval => serde_json::json!({
                "query": m.query,
                "expected_tools": m.expected,
                "retrieved_tools": m.actual,
                "retrieval_response": m.model_response_excerpt,
            }),
            Level::Tool => serde_json::json!({
                "query": m.query,
                "expected_tools": m.expected,
                "actual_tools": m.actual,
                "model_response": m.model_response_excerpt,
            }),
            Level::Parameter => serde_json::json!({
                "query": m.query,
                "param_coverage_ratio": m.param_coverage_ratio,
                "param_all_match": m.param_all_match,
                "tools_schema_expected": m.expected,
                "tools_schema_actual": m.actual,
            }),
        })
        .collect();
    serde_json::to_string_pretty(&entries).expect("mismatches serialize")
}

fn history_section(state: &[EditHistoryEntry]) -> String {
    if state.is_empty() {
        return "(none)".to_string();
    }
    let recent = &state[state.len().saturating_sub(STATE_WINDOW)..];
    recent
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let post = entry
                .post_score
                .map(|s| format!("{s:.4}"))
                .unwrap_or_else(|| "n/a".to_string());
            format!(
                "{}. tools [{}]: {:.4} -> {} ({})",
                i + 1,
                entry.tools.join(", "),
                entry.pre_score,
                post,
                if entry.accepted {
                    "accepted"
                } else {
                    "rejected"
                },
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn icl_section(level: Level, icl: &[IclExample]) -> String {
    let relevant: Vec<&IclExample> = icl.iter().filter(|e| e.level == level).collect();
    if relevant.is_empty() {
        return "(none)".to_string();
    }
    let rendered: Vec<serde_json::Value> = relevant
        .iter()
        .map(|e| {
            serde_json::json!({
                "before": e.before,
                "after": e.after,
                "outcome": match e.outcome {
                    IclOutcome::Accepted => "accepted",
                    IclOutcome::Rejected => "rejected",
                },
            })
        })
        .collect();
    serde_json::to_string_pretty(&rendered).expect("icl serializes")
}

/// One assembled editor prompt: the fixed seven sections in table order,
/// plus the prior-edit state rendered before the (always last) in-context
/// examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedInstruction {
    pub level: Level,
    pub title: String,
    pub task_description: String,
    /// Current contents of the involved tools plus the mismatch records,
    /// each as pretty JSON under its labeled slot.
    pub input_data: Vec<(String, String)>,
    pub analysis_task: String,
    pub issues_header: String,
    pub common_issues: Vec<String>,
    pub output_format: Vec<String>,
    pub requirements: Vec<String>,
    /// Prior proposals at this level with outcomes and score deltas.
    pub state: String,
    pub icl_examples: String,
}

impl GuidedInstruction {
    /// Assembles the instruction from the level's template. The input data
    /// embeds only documents of tools appearing in the mismatch records.
    pub fn assemble(
        level: Level,
        kb: &ToolKnowledgeBase,
        mismatches: &[MismatchRecord],
        state: &[EditHistoryEntry],
        icl: &[IclExample],
    ) -> Result<Self, EditorError> {
        if mismatches.is_empty() {
            return Err(EditorError::EmptyMismatches);
        }
        for record in mismatches {
            if record.level != level {
                return Err(EditorError::LevelMismatch {
                    expected: level,
                    found: record.level,
                });
            }
        }
        let t = template(level);
        let involved: BTreeSet<String> = mismatches.iter().flat_map(tools_in_mismatch).collect();
        Ok(GuidedInstruction {
            level,
            title: t.title.to_string(),
            task_description: t.task_description.to_string(),
            input_data: vec![
                (
                    t.contents_label.to_string(),
                    current_contents_json(level, kb, &involved),
                ),
                (
                    t.mismatches_label.to_string(),
                    mismatches_json(level, mismatches),
                ),
            ],
            analysis_task: t.analysis_task.to_string(),
            issues_header: t.issues_header.to_string(),
            common_issues: t.issues.iter().map(|s| s.to_string()).collect(),
            output_format: t.output_format.iter().map(|s| s.to_string()).collect(),
            requirements: t.requirements.iter().map(|s| s.to_string()).collect(),
            state: history_section(state),
            icl_examples: icl_section(level, icl),
        })
    }

    /// Renders the prompt text. Section order is fixed; every section is
    /// non-empty (empty state and example sets render as "(none)").
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.title);
        out.push_str("\n\nTask Description:\n");
        out.push_str(&self.task_description);
        out.push_str("\n\nInput Data:\n");
        for (label, body) in &self.input_data {
            out.push_str(label);
            out.push('\n');
            out.push_str(body);
            out.push('\n');
        }
        out.push_str("\nAnalysis Task:\n");
        out.push_str(&self.analysis_task);
        out.push_str("\n\n");
        out.push_str(&self.issues_header);
        out.push('\n');
        for issue in &self.common_issues {
            out.push_str("- ");
            out.push_str(issue);
            out.push('\n');
        }
        out.push_str("\nOutput Format:\n");
        for line in &self.output_format {
            out.push_str(line);
            out.push('\n');
        }
        out.push_str("\nRequirements:\n");
        for requirement in &self.requirements {
            out.push_str("- ");
            out.push_str(requirement);
            out.push('\n');
        }
        out.push_str("\nPrior Edit History:\n");
        out.push_str(&self.state);
        out.push_str("\n\nIn-Context Learning Examples:\n");
        out.push_str(&self.icl_examples);
        out.push('\n');
        out
    }
}

/// Assembles and renders the guided instruction for one editor call.
pub fn build_instruction(
    level: Level,
    kb: &ToolKnowledgeBase,
    mismatches: &[MismatchRecord],
    state: &[EditHistoryEntry],
    icl: &[IclExample],
) -> Result<String, EditorError> {
    Ok(GuidedInstruction::assemble(level, kb, mismatches, state, icl)?.render())
}

fn truncate_raw(text: &str) -> String {
    text.chars().take(400).collect()
}

/// ASCII-case-insensitive search returning a byte offset into `text`. The
/// headers are ASCII, so a match always starts on a char boundary even when
/// the surrounding output is not.
fn find_header(text: &str, header: &str) -> Option<usize> {
    let haystack = text.as_bytes();
    let needle = header.as_bytes();
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    (0..=haystack.len() - needle.len())
        .find(|&i| haystack[i..i + needle.len()].eq_ignore_ascii_case(needle))
}

/// Scans for the first JSON value starting at a `{` or `[`.
fn first_json_value(text: &str) -> Option<Result<serde_json::Value, String>> {
    for (i, c) in text.char_indices() {
        if c == '{' || c == '[' {
            let mut deserializer = serde_json::Deserializer::from_str(&text[i..]);
            return Some(
                serde::Deserialize::deserialize(&mut deserializer).map_err(|e| e.to_string()),
            );
        }
    }
    None
}

/// Parses raw editor output into a proposal, without constraint enforcement.
///
/// Total over arbitrary text: every failure is a typed parse error carrying
/// the (truncated) raw output for retry prompts.
pub fn parse_editor_output(text: &str, level: Level) -> Result<EditProposal, EditorParseError> {
    let t = template(level);
    let analysis_at =
        find_header(text, "ANALYSIS").ok_or_else(|| EditorParseError::MissingAnalysis {
            raw: truncate_raw(text),
        })?;
    let improved_at = find_header(text, t.improved_header)
        .or_else(|| find_header(text, "IMPROVED"))
        .ok_or_else(|| EditorParseError::MissingImproved {
            raw: truncate_raw(text),
        })?;
    if improved_at < analysis_at {
        return Err(EditorParseError::MissingImproved {
            raw: truncate_raw(text),
        });
    }

    let analysis = text[analysis_at..improved_at]
        .trim_start_matches(|c: char| c.is_alphabetic())
        .trim_start_matches([':', '*', '#'])
        .trim()
        .to_string();

    let tail = &text[improved_at + t.improved_header.len().min(text.len() - improved_at)..];
    let json = match first_json_value(tail) {
        Some(Ok(value)) => value,
        Some(Err(message)) => {
            return Err(EditorParseError::MalformedJson {
                message,
                raw: truncate_raw(tail),
            })
        }
        None => {
            return Err(EditorParseError::MissingJson {
                raw: truncate_raw(tail),
            })
        }
    };

    let modifications = modifications_from_json(level, &json).map_err(|message| {
        EditorParseError::InvalidEntry {
            message,
            raw: truncate_raw(tail),
        }
    })?;
    Ok(EditProposal {
        level,
        analysis,
        modifications,
        source_mismatches: Vec::new(),
        pre_score: 0.0,
        post_score: None,
        accepted: None,
    })
}

fn text_mod(obj: &serde_json::Map<String, serde_json::Value>, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| obj.get(*k).and_then(|v| v.as_str()).map(str::to_string))
}

fn entry_name(obj: &serde_json::Map<String, serde_json::Value>) -> Option<String> {
    text_mod(obj, &["name", "Tool Name", "tool_name", "tool"])
}

fn modifications_from_json(
    level: Level,
    json: &serde_json::Value,
) -> Result<BTreeMap<String, LevelContent>, String> {
    let mut mods = BTreeMap::new();
    match json {
        serde_json::Value::Array(items) => {
            for item in items {
                let obj = item.as_object().ok_or("array entries must be objects")?;
                let name = entry_name(obj).ok_or("entry is missing a tool name")?;
                mods.insert(name.clone(), entry_content(level, &name, item)?);
            }
        }
        serde_json::Value::Object(obj) => {
            if entry_name(obj).is_some() {
                let name = entry_name(obj).expect("checked");
                mods.insert(name.clone(), entry_content(level, &name, json)?);
            } else {
                // Map form: tool name -> content.
                for (name, value) in obj {
                    mods.insert(name.clone(), entry_content(level, name, value)?);
                }
            }
        }
        _ => return Err("expected a JSON object or array of modifications".to_string()),
    }
    if mods.is_empty() {
        return Err("no modification entries found".to_string());
    }
    Ok(mods)
}

fn entry_content(
    level: Level,
    name: &str,
    entry: &serde_json::Value,
) -> Result<LevelContent, String> {
    match level {
        Level::Retrieval => {
            let text = match entry {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Object(obj) => {
                    text_mod(obj, &["retrieval content", "retrieval_content", "content"])
                        .ok_or(format!("{name}: no retrieval content field"))?
                }
                _ => return Err(format!("{name}: unsupported retrieval entry")),
            };
            Ok(LevelContent::Text(text))
        }
        Level::Tool => {
            let text = match entry {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Object(obj) => text_mod(obj, &["description", "desc"])
                    .ok_or(format!("{name}: no description field"))?,
                _ => return Err(format!("{name}: unsupported description entry")),
            };
            Ok(LevelContent::Text(text))
        }
        Level::Parameter => {
            let params_json = match entry {
                serde_json::Value::Array(_) => entry,
                serde_json::Value::Object(obj) => obj
                    .get("parameters")
                    .or_else(|| obj.get("tools"))
                    .or_else(|| obj.get("params"))
                    .ok_or(format!("{name}: no parameters field"))?,
                _ => return Err(format!("{name}: unsupported schema entry")),
            };
            Ok(LevelContent::Parameters(
                crate::tooldoc::parse_parameters_json(name, params_json)?,
            ))
        }
    }
}

/// Why a modification entry was dropped during enforcement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedModification {
    pub tool: String,
    pub reason: String,
}

/// Result of constraint enforcement: the surviving proposal (if any entries
/// survived) plus the dropped entries with reasons.
#[derive(Debug, Clone, PartialEq)]
pub struct EnforcementOutcome {
    pub proposal: Option<EditProposal>,
    pub dropped: Vec<DroppedModification>,
}

/// Restricts a proposal to the allowed tools and to content that validates.
///
/// Entries editing tools outside the mismatch set, unknown tools, or invalid
/// content are dropped with reasons; a proposal whose every entry drops is
/// rejected outright (`proposal: None`).
pub fn enforce_constraints(
    proposal: EditProposal,
    allowed_tools: &BTreeSet<String>,
    kb: &ToolKnowledgeBase,
) -> EnforcementOutcome {
    let mut dropped = Vec::new();
    let mut surviving = BTreeMap::new();
    for (tool, content) in proposal.modifications {
        if !allowed_tools.contains(&tool) {
            dropped.push(DroppedModification {
                tool: tool.clone(),
                reason: "tool does not appear in the mismatch examples".to_string(),
            });
            tracing::warn!(tool, "dropping out-of-mismatch modification");
            continue;
        }
        if !kb.contains(&tool) {
            dropped.push(DroppedModification {
                tool,
                reason: "tool is not in the knowledge base".to_string(),
            });
            continue;
        }
        let violation = match &content {
            LevelContent::Text(text) if text.trim().is_empty() => {
                Some("replacement text is empty".to_string())
            }
            LevelContent::Text(_) => None,
            LevelContent::Parameters(params) => {
                let violations = validate_parameters(&tool, params);
                if violations.is_empty() {
                    None
                } else {
                    Some(
                        violations
                            .iter()
                            .map(|v| v.to_string())
                            .collect::<Vec<_>>()
                            .join("; "),
                    )
                }
            }
        };
        match violation {
            Some(reason) => dropped.push(DroppedModification { tool, reason }),
            None => {
                surviving.insert(tool, content);
            }
        }
    }
    if surviving.is_empty() {
        return EnforcementOutcome {
            proposal: None,
            dropped,
        };
    }
    EnforcementOutcome {
        proposal: Some(EditProposal {
            modifications: surviving,
            ..proposal
        }),
        dropped,
    }
}

/// Calls the editor backend and parses its output, retrying malformed
/// replies with the parse error appended. Returns the proposal together with
/// the raw accepted output.
pub fn request_proposal(
    backend: &dyn Backend,
    instruction: &str,
    level: Level,
    model: &str,
) -> Result<(EditProposal, String), EditorError> {
    let mut prompt = instruction.to_string();
    let mut last_error: Option<EditorParseError> = None;
    for _attempt in 0..=PARSE_RETRIES {
        let request = CompletionRequest {
            model: model.to_string(),
            prompt: prompt.clone(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 4096,
            role: "editor".to_string(),
        };
        let response = backend.complete(&request)?;
        match parse_editor_output(&response.text, level) {
            Ok(proposal) => return Ok((proposal, response.text)),
            Err(err) => {
                prompt = format!(
                    "{instruction}\n\nYour previous response could not be used: {err}\nRespond \
                     again and follow the Output Format exactly."
                );
                last_error = Some(err);
            }
        }
    }
    Err(EditorError::Parse(
        last_error.expect("loop ran at least once"),
    ))
}

/// Generates the initial retrieval content for one document: a summary of
/// the description, input schema, and system information.
pub fn generate_retrieval_content(
    doc: &ToolDocument,
    backend: &dyn Backend,
    model: &str,
) -> Result<String, EditorError> {
    let schema_json =
        serde_json::to_string_pretty(&doc.parameter_schema).expect("schema serializes");
    let prompt = format!(
        "Summarize the following tool document for a retrieval knowledge base. Cover the tool's \
         purpose, its input schema, and any system information a search should find. Reply with \
         the summary text only.\n\nTool name: {}\nDescription: {}\nInput schema:\n{}\n",
        doc.name, doc.description, schema_json
    );
    let request = CompletionRequest::new(prompt)
        .with_role("summarizer")
        .with_model(model);
    let response = backend.complete(&request)?;
    let summary = response.text.trim().to_string();
    if summary.is_empty() {
        return Err(EditorError::EmptySummary);
    }
    Ok(summary)
}
