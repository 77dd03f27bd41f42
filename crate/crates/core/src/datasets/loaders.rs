//! JSON-lines loaders for the two supported record shapes.
//!
//! Both shapes are documented in the repository README. A record carries a
//! query, candidate tool documents, and ground-truth calls; fields commonly
//! found in the wild (`tools` as an embedded JSON string, parameter maps,
//! loose type names, ", optional" markers) are normalized on load.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::Value as Json;

use super::DatasetError;
use crate::callparse::ToolCall;
use crate::evalharness::{ExampleSource, ValidationExample};
use crate::tooldoc::{parse_parameters_json, ToolDocument, ToolKnowledgeBase};

fn read_lines(path: &Path) -> Result<Vec<(usize, Json)>, DatasetError> {
    let raw = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (line_idx, line) in raw.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Json = serde_json::from_str(trimmed).map_err(|e| DatasetError::Record {
            index: line_idx,
            message: format!("malformed JSON: {e}"),
        })?;
        records.push((line_idx, value));
    }
    if records.is_empty() {
        return Err(DatasetError::Empty(path.display().to_string()));
    }
    Ok(records)
}

/// Fields that may arrive either inline or as an embedded JSON string.
fn unwrap_embedded(value: &Json) -> Result<Json, String> {
    match value {
        Json::String(s) => serde_json::from_str(s).map_err(|e| format!("embedded JSON: {e}")),
        other => Ok(other.clone()),
    }
}

fn record_field<'a>(record: &'a Json, names: &[&str]) -> Option<&'a Json> {
    names.iter().find_map(|n| record.get(*n))
}

fn tool_doc_from_json(value: &Json) -> Result<ToolDocument, String> {
    let obj = value.as_object().ok_or("tool entries must be objects")?;
    let name = ["name", "Tool Name", "tool_name"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(|v| v.as_str()))
        .ok_or("tool entry has no name")?;
    let description = obj
        .get("description")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    if description.trim().is_empty() {
        return Err(format!("tool {name}: empty description"));
    }
    let parameters = match obj.get("parameters").or_else(|| obj.get("params")) {
        Some(value) => parse_parameters_json(name, value)?,
        None => Vec::new(),
    };
    let mut doc = ToolDocument::new(name, description).with_parameters(parameters);
    if let Some(content) = ["retrieval_content", "retrieval content"]
        .iter()
        .find_map(|k| obj.get(*k).and_then(|v| v.as_str()))
    {
        doc.retrieval_content = content.to_string();
    } else {
        // Initial retrieval content defaults to a deterministic extract; a
        // summarization backend can replace it later.
        doc.retrieval_content = doc.default_retrieval_content();
    }
    Ok(doc)
}

fn calls_from_json(value: &Json) -> Result<Vec<ToolCall>, String> {
    let items = value
        .as_array()
        .ok_or("ground-truth calls must be an array")?;
    items
        .iter()
        .map(|item| serde_json::from_value(item.clone()).map_err(|e| format!("call: {e}")))
        .collect()
}

/// Result of loading a parallel-call dataset: the examples, the knowledge
/// base derived from the distinct tool documents, and how many examples were
/// dropped by the frequency filter.
#[derive(Debug)]
pub struct XlamLoad {
    pub examples: Vec<ValidationExample>,
    pub kb: ToolKnowledgeBase,
    pub dropped_examples: usize,
    pub distinct_tools_seen: usize,
}

/// Loads parallel-call records and derives the knowledge base, keeping the
/// `top_n` most frequently called tools (frequency over ground-truth calls,
/// ties by name). Examples referencing dropped tools are dropped and counted.
pub fn load_xlam(path: &Path, top_n: usize) -> Result<XlamLoad, DatasetError> {
    let records = read_lines(path)?;
    let mut docs: BTreeMap<String, ToolDocument> = BTreeMap::new();
    let mut usage: BTreeMap<String, usize> = BTreeMap::new();
    let mut parsed: Vec<(usize, String, Vec<ToolCall>)> = Vec::new();

    for (index, record) in &records {
        let fail = |message: String| DatasetError::Record {
            index: *index,
            message,
        };
        let query = record_field(record, &["query", "question"])
            .and_then(|v| v.as_str())
            .ok_or_else(|| fail("record has no query".to_string()))?
            .to_string();
        let tools_json = record_field(record, &["tools", "functions", "function"])
            .ok_or_else(|| fail("record has no tools".to_string()))?;
        let tools_json = unwrap_embedded(tools_json).map_err(&fail)?;
        let tools = tools_json
            .as_array()
            .ok_or_else(|| fail("tools must be an array".into()))?;
        for tool in tools {
            let doc = tool_doc_from_json(tool).map_err(&fail)?;
            // First definition wins; later conflicting copies are ignored.
            docs.entry(doc.name.clone()).or_insert(doc);
        }
        let answers_json = record_field(record, &["answers", "ground_truth", "calls"])
            .ok_or_else(|| fail("record has no answers".to_string()))?;
        let answers_json = unwrap_embedded(answers_json).map_err(&fail)?;
        let calls = calls_from_json(&answers_json).map_err(&fail)?;
        if calls.is_empty() {
            return Err(fail("record has no ground-truth calls".to_string()));
        }
        for call in &calls {
            *usage.entry(call.name.clone()).or_insert(0) += 1;
            if !docs.contains_key(&call.name) {
                return Err(fail(format!(
                    "ground truth calls {:?} but no such tool document exists",
                    call.name
                )));
            }
        }
        parsed.push((*index, query, calls));
    }

    let distinct_tools_seen = docs.len();
    let mut by_usage: Vec<(&String, &usize)> = usage.iter().collect();
    by_usage.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let kept: std::collections::BTreeSet<String> = by_usage
        .iter()
        .take(top_n)
        .map(|(name, _)| (*name).clone())
        .collect();

    let kb_docs: Vec<ToolDocument> = docs
        .into_values()
        .filter(|d| kept.contains(&d.name))
        .collect();
    let kb = ToolKnowledgeBase::new("kb-xlam", kb_docs).map_err(|e| DatasetError::Record {
        index: 0,
        message: e.to_string(),
    })?;

    let mut examples = Vec::new();
    let mut dropped_examples = 0usize;
    for (index, query, calls) in parsed {
        if calls.iter().all(|c| kept.contains(&c.name)) {
            let example = ValidationExample::new(query, calls, ExampleSource::Xlam)
                .map_err(|message| DatasetError::Record { index, message })?;
            examples.push(example);
        } else {
            dropped_examples += 1;
        }
    }
    if dropped_examples > 0 {
        tracing::info!(
            dropped_examples,
            "examples dropped by the top-{top_n} tool filter"
        );
    }
    Ok(XlamLoad {
        examples,
        kb,
        dropped_examples,
        distinct_tools_seen,
    })
}

/// The four single-turn record categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfclCategory {
    Simple,
    Multiple,
    Parallel,
    ParallelMultiple,
}

impl std::str::FromStr for BfclCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(BfclCategory::Simple),
            "multiple" => Ok(BfclCategory::Multiple),
            "parallel" => Ok(BfclCategory::Parallel),
            "parallel_multiple" | "parallel-multiple" => Ok(BfclCategory::ParallelMultiple),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

fn check_category(
    category: BfclCategory,
    candidates: usize,
    calls: &[ToolCall],
    candidate_names: &std::collections::BTreeSet<String>,
) -> Result<(), String> {
    match category {
        BfclCategory::Simple => {
            if candidates != 1 {
                return Err(format!(
                    "simple records carry exactly 1 candidate, got {candidates}"
                ));
            }
            if calls.len() != 1 {
                return Err(format!(
                    "simple records expect exactly 1 call, got {}",
                    calls.len()
                ));
            }
        }
        BfclCategory::Multiple => {
            if !(2..=4).contains(&candidates) {
                return Err(format!(
                    "multiple records carry 2-4 candidates, got {candidates}"
                ));
            }
            if calls.len() != 1 {
                return Err(format!(
                    "multiple records expect exactly 1 call, got {}",
                    calls.len()
                ));
            }
        }
        BfclCategory::Parallel => {
            if candidates != 1 {
                return Err(format!(
                    "parallel records carry exactly 1 candidate, got {candidates}"
                ));
            }
            if calls.is_empty() {
                return Err("parallel records expect at least 1 call".to_string());
            }
            let only = candidate_names.iter().next().expect("one candidate");
            if calls.iter().any(|c| &c.name != only) {
                return Err("parallel calls must all target the single candidate".to_string());
            }
        }
        BfclCategory::ParallelMultiple => {
            if candidates < 2 {
                return Err(format!(
                    "parallel_multiple records carry at least 2 candidates, got {candidates}"
                ));
            }
            if calls.is_empty() {
                return Err("parallel_multiple records expect at least 1 call".to_string());
            }
        }
    }
    for call in calls {
        if !candidate_names.contains(&call.name) {
            return Err(format!(
                "call targets {:?} which is not a candidate",
                call.name
            ));
        }
    }
    Ok(())
}

/// Loads single-turn function-calling records of one category.
///
/// Candidate tools not called by the ground truth stay out of
/// `expected_tools`: they are distractors, not retrieval targets.
pub fn load_bfcl(
    path: &Path,
    category: BfclCategory,
) -> Result<Vec<ValidationExample>, DatasetError> {
    let records = read_lines(path)?;
    let mut examples = Vec::new();
    for (index, record) in &records {
        let fail = |message: String| DatasetError::Record {
            index: *index,
            message,
        };
        let query = record_field(record, &["question", "query"])
            .and_then(|v| v.as_str())
            .ok_or_else(|| fail("record has no question".to_string()))?
            .to_string();
        let tools_json = record_field(record, &["function", "functions", "tools"])
            .ok_or_else(|| fail("record has no function documents".to_string()))?;
        let tools_json = unwrap_embedded(tools_json).map_err(&fail)?;
        let tools: Vec<Json> = match tools_json {
            Json::Array(items) => items,
            object @ Json::Object(_) => vec![object],
            _ => return Err(fail("function documents must be an array or object".into())),
        };
        let mut candidate_names = std::collections::BTreeSet::new();
        for tool in &tools {
            let doc = tool_doc_from_json(tool).map_err(&fail)?;
            candidate_names.insert(doc.name);
        }
        let answers_json = record_field(record, &["ground_truth", "answers", "calls"])
            .ok_or_else(|| fail("record has no ground truth".to_string()))?;
        let answers_json = unwrap_embedded(answers_json).map_err(&fail)?;
        let calls = calls_from_json(&answers_json).map_err(&fail)?;
        check_category(category, tools.len(), &calls, &candidate_names).map_err(&fail)?;
        let example =
            ValidationExample::new(query, calls, ExampleSource::Bfcl).map_err(|message| {
                DatasetError::Record {
                    index: *index,
                    message,
                }
            })?;
        examples.push(example);
    }
    Ok(examples)
}

/// Union of candidate tool documents across all records, first definition
/// wins. Pairs with [`load_bfcl`] when a knowledge base is needed.
pub fn load_bfcl_tools(path: &Path) -> Result<Vec<ToolDocument>, DatasetError> {
    let records = read_lines(path)?;
    let mut docs: BTreeMap<String, ToolDocument> = BTreeMap::new();
    for (index, record) in &records {
        let fail = |message: String| DatasetError::Record {
            index: *index,
            message,
        };
        let tools_json = record_field(record, &["function", "functions", "tools"])
            .ok_or_else(|| fail("record has no function documents".to_string()))?;
        let tools_json = unwrap_embedded(tools_json).map_err(&fail)?;
        let tools: Vec<Json> = match tools_json {
            Json::Array(items) => items,
            object @ Json::Object(_) => vec![object],
            _ => return Err(fail("function documents must be an array or object".into())),
        };
        for tool in &tools {
            let doc = tool_doc_from_json(tool).map_err(&fail)?;
            docs.entry(doc.name.clone()).or_insert(doc);
        }
    }
    Ok(docs.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::callparse::Value;
    use std::io::Write;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file.flush().unwrap();
        file
    }

    const WHOIS_TOOL: &str = r#"{"name": "whois", "description": "Looks up WHOIS records", "parameters": [{"name": "domain", "type": "string", "required": true}]}"#;

    #[test]
    fn repeated_calls_stay_a_multiset() {
        let record = format!(
            r#"{{"query": "whois yahoo.com and microsoft.com", "tools": [{WHOIS_TOOL}], "answers": [{{"name": "whois", "arguments": {{"domain": "yahoo.com"}}}}, {{"name": "whois", "arguments": {{"domain": "microsoft.com"}}}}]}}"#
        );
        let file = write_lines(&[&record]);
        let load = load_xlam(file.path(), 100).unwrap();
        assert_eq!(load.examples.len(), 1);
        assert_eq!(load.examples[0].expected_calls.len(), 2);
        assert_eq!(load.examples[0].expected_tools.len(), 1);
        assert_eq!(load.kb.len(), 1);
    }

    #[test]
    fn top_n_filter_keeps_the_most_frequent_tool() {
        let lines = [
            format!(
                r#"{{"query": "q1", "tools": [{WHOIS_TOOL}, {{"name": "rare", "description": "rarely used", "parameters": []}}], "answers": [{{"name": "whois", "arguments": {{"domain": "a.com"}}}}]}}"#
            ),
            format!(
                r#"{{"query": "q2", "tools": [{WHOIS_TOOL}], "answers": [{{"name": "whois", "arguments": {{"domain": "b.com"}}}}]}}"#
            ),
            r#"{"query": "q3", "tools": [{"name": "rare", "description": "rarely used", "parameters": []}], "answers": [{"name": "rare", "arguments": {}}]}"#.to_string(),
        ];
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let file = write_lines(&refs);
        let load = load_xlam(file.path(), 1).unwrap();
        assert_eq!(load.kb.len(), 1);
        assert!(load.kb.contains("whois"));
        assert_eq!(load.examples.len(), 2);
        assert_eq!(load.dropped_examples, 1);
        assert_eq!(load.distinct_tools_seen, 2);
    }

    #[test]
    fn empty_file_is_an_error() {
        let file = write_lines(&[]);
        assert!(matches!(
            load_xlam(file.path(), 100),
            Err(DatasetError::Empty(_))
        ));
    }

    #[test]
    fn embedded_json_strings_are_unwrapped() {
        let record = r#"{"query": "q", "tools": "[{\"name\": \"t\", \"description\": \"d\", \"parameters\": {\"x\": {\"type\": \"int\", \"description\": \"a number\"}}}]", "answers": "[{\"name\": \"t\", \"arguments\": {\"x\": 3}}]"}"#;
        let file = write_lines(&[record]);
        let load = load_xlam(file.path(), 100).unwrap();
        assert_eq!(load.examples[0].expected_calls[0].args["x"], Value::Int(3));
        let doc = load.kb.get("t").unwrap();
        assert_eq!(doc.parameter_schema[0].name, "x");
        assert!(!doc.retrieval_content.is_empty());
    }

    #[test]
    fn schema_violations_carry_the_record_index() {
        let lines = [
            format!(
                r#"{{"query": "ok", "tools": [{WHOIS_TOOL}], "answers": [{{"name": "whois", "arguments": {{}}}}]}}"#
            ),
            r#"{"query": "broken", "tools": [{"name": "x", "description": "d", "parameters": [{"name": "p", "type": "quaternion"}]}], "answers": [{"name": "x", "arguments": {}}]}"#.to_string(),
        ];
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let file = write_lines(&refs);
        match load_xlam(file.path(), 100) {
            Err(DatasetError::Record { index, message }) => {
                assert_eq!(index, 1);
                assert!(message.contains("quaternion"));
            }
            other => panic!("expected record error, got {other:?}"),
        }
    }

    const CANDIDATES_4: &str = r#"[{"name": "a", "description": "da", "parameters": []}, {"name": "b", "description": "db", "parameters": []}, {"name": "c", "description": "dc", "parameters": []}, {"name": "d", "description": "dd", "parameters": []}]"#;

    #[test]
    fn multiple_category_rejects_five_candidates() {
        let five = r#"[{"name": "a", "description": "da"}, {"name": "b", "description": "db"}, {"name": "c", "description": "dc"}, {"name": "d", "description": "dd"}, {"name": "e", "description": "de"}]"#;
        let record = format!(
            r#"{{"question": "q", "function": {five}, "ground_truth": [{{"name": "a", "arguments": {{}}}}]}}"#
        );
        let file = write_lines(&[&record]);
        match load_bfcl(file.path(), BfclCategory::Multiple) {
            Err(DatasetError::Record { message, .. }) => assert!(message.contains("2-4")),
            other => panic!("expected category error, got {other:?}"),
        }
    }

    #[test]
    fn parallel_category_accepts_three_calls_to_one_function() {
        let record = r#"{"question": "q", "function": [{"name": "f", "description": "df", "parameters": [{"name": "x", "type": "int"}]}], "ground_truth": [{"name": "f", "arguments": {"x": 1}}, {"name": "f", "arguments": {"x": 2}}, {"name": "f", "arguments": {"x": 3}}]}"#;
        let file = write_lines(&[record]);
        let examples = load_bfcl(file.path(), BfclCategory::Parallel).unwrap();
        assert_eq!(examples[0].expected_calls.len(), 3);
    }

    #[test]
    fn parallel_multiple_leaves_uncalled_candidates_out_of_expected_tools() {
        let record = format!(
            r#"{{"question": "q", "function": {CANDIDATES_4}, "ground_truth": [{{"name": "a", "arguments": {{}}}}, {{"name": "b", "arguments": {{}}}}]}}"#
        );
        let file = write_lines(&[&record]);
        let examples = load_bfcl(file.path(), BfclCategory::ParallelMultiple).unwrap();
        let expected: Vec<&str> = examples[0]
            .expected_tools
            .iter()
            .map(String::as_str)
            .collect();
        assert_eq!(expected, vec!["a", "b"]);
        let tools = load_bfcl_tools(file.path()).unwrap();
        assert_eq!(tools.len(), 4);
    }

    #[test]
    fn calls_to_non_candidates_are_rejected() {
        let record = format!(
            r#"{{"question": "q", "function": {CANDIDATES_4}, "ground_truth": [{{"name": "ghost", "arguments": {{}}}}]}}"#
        );
        let file = write_lines(&[&record]);
        assert!(matches!(
            load_bfcl(file.path(), BfclCategory::ParallelMultiple),
            Err(DatasetError::Record { .. })
        ));
    }
}
