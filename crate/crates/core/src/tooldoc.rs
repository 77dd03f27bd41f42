//! Tool documents and the versioned tool knowledge base.
//!
//! Every tool carries three independently editable layers of context: the
//! retrieval content searched by the retriever, the description shown during
//! tool selection, and the parameter schema consulted during parameter
//! filling. A [`ToolKnowledgeBase`] is an immutable snapshot of all documents;
//! edits produce a fresh snapshot and bump the version of touched documents
//! only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::callparse::Value;

/// The three context layers of a tool document, ordered top-down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Retrieval,
    Tool,
    Parameter,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Retrieval, Level::Tool, Level::Parameter];

    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Retrieval => "retrieval",
            Level::Tool => "tool",
            Level::Parameter => "parameter",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed vocabulary of parameter value kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ValueKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ValueKind::String => "string",
            ValueKind::Integer => "integer",
            ValueKind::Number => "number",
            ValueKind::Boolean => "boolean",
            ValueKind::Array => "array",
            ValueKind::Object => "object",
        }
    }

    /// Normalizes one loosely written kind token ("int", "str", "float", ...).
    pub fn parse_token(token: &str) -> Option<ValueKind> {
        match token.trim().to_ascii_lowercase().as_str() {
            "string" | "str" | "text" => Some(ValueKind::String),
            "integer" | "int" | "long" => Some(ValueKind::Integer),
            "number" | "float" | "double" | "real" => Some(ValueKind::Number),
            "boolean" | "bool" => Some(ValueKind::Boolean),
            "array" | "list" => Some(ValueKind::Array),
            "object" | "dict" | "map" => Some(ValueKind::Object),
            _ => None,
        }
    }

    /// Normalizes a kind spec that may be a union like `"number|array"`.
    ///
    /// Returns the primary kind plus the remaining union members as
    /// alternates. A trailing ", optional" marker (a common loose notation)
    /// is reported through the second flag.
    pub fn parse_spec(spec: &str) -> Result<(ValueKind, Vec<ValueKind>, bool), String> {
        let mut optional = false;
        let mut head = spec.trim();
        if let Some((kind_part, rest)) = head.split_once(',') {
            if rest.to_ascii_lowercase().contains("optional") {
                optional = true;
            }
            head = kind_part.trim();
        }
        let mut kinds = Vec::new();
        for token in head.split('|') {
            match ValueKind::parse_token(token) {
                Some(kind) => {
                    if !kinds.contains(&kind) {
                        kinds.push(kind);
                    }
                }
                None => return Err(format!("unknown value kind {token:?}")),
            }
        }
        let primary = *kinds
            .first()
            .ok_or_else(|| "empty value kind".to_string())?;
        Ok((primary, kinds[1..].to_vec(), optional))
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parameter of a tool's input schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub value_kind: ValueKind,
    /// Additional accepted kinds for loosely typed union schemas.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternate_kinds: Vec<ValueKind>,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_value: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub example_values: Vec<Value>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, value_kind: ValueKind, required: bool) -> Self {
        ParameterSpec {
            name: name.into(),
            description: String::new(),
            value_kind,
            alternate_kinds: Vec::new(),
            required,
            default_value: None,
            example_values: Vec::new(),
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_default(mut self, value: Value) -> Self {
        self.default_value = Some(value);
        self
    }

    pub fn with_examples(mut self, values: Vec<Value>) -> Self {
        self.example_values = values;
        self
    }

    /// True when `value`'s kind is the declared kind or one of the alternates.
    pub fn accepts_kind(&self, value: &Value) -> bool {
        std::iter::once(&self.value_kind)
            .chain(self.alternate_kinds.iter())
            .any(|kind| value.conforms_to(*kind))
    }
}

/// Where a document's current content came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Original,
    Edited { level: Level, iteration: usize },
}

/// One tool's full three-layer context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDocument {
    pub name: String,
    /// Layer searched by the retriever; never shown to the inference model.
    #[serde(default)]
    pub retrieval_content: String,
    /// Layer read during tool selection.
    pub description: String,
    /// Layer read during parameter filling.
    #[serde(default)]
    pub parameter_schema: Vec<ParameterSpec>,
    #[serde(default)]
    pub version: u64,
    #[serde(default = "Provenance::original")]
    pub provenance: Provenance,
}

impl Provenance {
    fn original() -> Provenance {
        Provenance::Original
    }
}

impl ToolDocument {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        ToolDocument {
            name: name.into(),
            retrieval_content: String::new(),
            description: description.into(),
            parameter_schema: Vec::new(),
            version: 0,
            provenance: Provenance::Original,
        }
    }

    pub fn with_retrieval_content(mut self, content: impl Into<String>) -> Self {
        self.retrieval_content = content.into();
        self
    }

    pub fn with_parameters(mut self, params: Vec<ParameterSpec>) -> Self {
        self.parameter_schema = params;
        self
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameter_schema.iter().find(|p| p.name == name)
    }

    /// Deterministic fallback retrieval content: the description plus a
    /// parameter summary. Used when a document is loaded without retrieval
    /// content and no summarization backend is configured.
    pub fn default_retrieval_content(&self) -> String {
        let mut out = format!("{}. {}", self.name.replace('_', " "), self.description);
        if !self.parameter_schema.is_empty() {
            let params: Vec<String> = self
                .parameter_schema
                .iter()
                .map(|p| {
                    format!(
                        "{} ({}{})",
                        p.name,
                        p.value_kind,
                        if p.required { ", required" } else { "" }
                    )
                })
                .collect();
            out.push_str(&format!(" Inputs: {}.", params.join(", ")));
        }
        out
    }
}

/// Parses one loosely written parameter entry.
///
/// Accepts the full object form (`{"name", "type", "description", "default",
/// "required", "examples"}`) and the terse single-pair form
/// (`{"charge": "int"}`). Required defaults to true unless a default value or
/// an ", optional" marker is present.
pub fn parse_parameter_json(tool: &str, item: &serde_json::Value) -> Result<ParameterSpec, String> {
    let obj = item
        .as_object()
        .ok_or(format!("{tool}: parameter entries must be objects"))?;
    if obj.len() == 1 && !obj.contains_key("name") {
        let (pname, kind_value) = obj.iter().next().expect("len checked");
        if let Some(kind_str) = kind_value.as_str() {
            let (kind, alternates, optional) = ValueKind::parse_spec(kind_str)?;
            let mut spec = ParameterSpec::new(pname.clone(), kind, !optional);
            spec.alternate_kinds = alternates;
            return Ok(spec);
        }
        // Map form with a nested object: {"charge": {"type": ..., ...}}.
        if kind_value.is_object() {
            let mut nested = kind_value.as_object().expect("checked").clone();
            nested.insert("name".to_string(), serde_json::Value::String(pname.clone()));
            return parse_parameter_json(tool, &serde_json::Value::Object(nested));
        }
        return Err(format!("{tool}: parameter {pname} kind must be a string"));
    }

    let get_str = |keys: &[&str]| -> Option<String> {
        keys.iter()
            .find_map(|k| obj.get(*k).and_then(|v| v.as_str()).map(str::to_string))
    };
    let pname = get_str(&["name"]).ok_or(format!("{tool}: parameter without a name"))?;
    let kind_str = get_str(&["type", "value_kind", "kind"])
        .ok_or(format!("{tool}: parameter {pname} has no type"))?;
    let (kind, alternates, optional_marker) = ValueKind::parse_spec(&kind_str)?;

    let default_value = match obj.get("default").or_else(|| obj.get("default_value")) {
        Some(serde_json::Value::Null) | None => None,
        Some(value) => Some(
            Value::try_from(value.clone())
                .map_err(|e| format!("{tool}: parameter {pname} default: {e}"))?,
        ),
    };
    let required = match obj.get("required").and_then(|v| v.as_bool()) {
        Some(explicit) => explicit,
        None => default_value.is_none() && !optional_marker,
    };
    let mut example_values = Vec::new();
    if let Some(serde_json::Value::Array(items)) =
        obj.get("examples").or_else(|| obj.get("example_values"))
    {
        for item in items {
            example_values.push(
                Value::try_from(item.clone())
                    .map_err(|e| format!("{tool}: parameter {pname} example: {e}"))?,
            );
        }
    }

    let mut spec = ParameterSpec::new(pname, kind, required);
    spec.alternate_kinds = alternates;
    spec.description = get_str(&["description", "desc"]).unwrap_or_default();
    spec.default_value = if required { None } else { default_value };
    spec.example_values = example_values;
    Ok(spec)
}

/// Parses a whole parameter collection: a JSON array of entries or a map of
/// `name -> definition`.
pub fn parse_parameters_json(
    tool: &str,
    value: &serde_json::Value,
) -> Result<Vec<ParameterSpec>, String> {
    match value {
        serde_json::Value::Array(items) => {
            let mut params = Vec::with_capacity(items.len());
            for item in items {
                // A multi-pair terse object inside an array counts as several
                // parameters.
                if let Some(obj) = item.as_object() {
                    if !obj.contains_key("name") && obj.len() > 1 {
                        for (pname, kind_value) in obj {
                            let single = serde_json::json!({ pname: kind_value });
                            params.push(parse_parameter_json(tool, &single)?);
                        }
                        continue;
                    }
                }
                params.push(parse_parameter_json(tool, item)?);
            }
            Ok(params)
        }
        serde_json::Value::Object(entries) => {
            let mut params = Vec::with_capacity(entries.len());
            for (pname, definition) in entries {
                let single = serde_json::json!({ pname.as_str(): definition });
                params.push(parse_parameter_json(tool, &single)?);
            }
            Ok(params)
        }
        serde_json::Value::Null => Ok(Vec::new()),
        _ => Err(format!("{tool}: parameters must be an array or object")),
    }
}

/// A structural problem found in a document. Violations are data, not faults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    EmptyToolName,
    EmptyDescription {
        tool: String,
    },
    EmptyRetrievalContent {
        tool: String,
    },
    EmptyParameterName {
        tool: String,
    },
    DuplicateParameterName {
        tool: String,
        parameter: String,
    },
    RequiredParameterHasDefault {
        tool: String,
        parameter: String,
    },
    ExampleKindMismatch {
        tool: String,
        parameter: String,
        example: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyToolName => write!(f, "tool name is empty"),
            Violation::EmptyDescription { tool } => write!(f, "{tool}: description is empty"),
            Violation::EmptyRetrievalContent { tool } => {
                write!(f, "{tool}: retrieval content is empty")
            }
            Violation::EmptyParameterName { tool } => {
                write!(f, "{tool}: parameter name is empty")
            }
            Violation::DuplicateParameterName { tool, parameter } => {
                write!(f, "{tool}: duplicate parameter name {parameter:?}")
            }
            Violation::RequiredParameterHasDefault { tool, parameter } => {
                write!(
                    f,
                    "{tool}: required parameter {parameter:?} carries a default value"
                )
            }
            Violation::ExampleKindMismatch {
                tool,
                parameter,
                example,
            } => {
                write!(
                    f,
                    "{tool}: example {example} does not conform to {parameter:?}'s kind"
                )
            }
        }
    }
}

/// Checks every document invariant and returns the full violation list.
///
/// An empty list means the document is valid.
pub fn validate_document(doc: &ToolDocument) -> Vec<Violation> {
    let mut violations = Vec::new();
    if doc.name.trim().is_empty() {
        violations.push(Violation::EmptyToolName);
    }
    if doc.description.trim().is_empty() {
        violations.push(Violation::EmptyDescription {
            tool: doc.name.clone(),
        });
    }
    if doc.retrieval_content.trim().is_empty() {
        violations.push(Violation::EmptyRetrievalContent {
            tool: doc.name.clone(),
        });
    }
    violations.extend(validate_parameters(&doc.name, &doc.parameter_schema));
    violations
}

/// Parameter-schema invariants alone, reused when validating a schema edit.
pub fn validate_parameters(tool: &str, params: &[ParameterSpec]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    for param in params {
        if param.name.trim().is_empty() {
            violations.push(Violation::EmptyParameterName {
                tool: tool.to_string(),
            });
            continue;
        }
        if !seen.insert(param.name.clone()) {
            violations.push(Violation::DuplicateParameterName {
                tool: tool.to_string(),
                parameter: param.name.clone(),
            });
        }
        if param.required && param.default_value.is_some() {
            violations.push(Violation::RequiredParameterHasDefault {
                tool: tool.to_string(),
                parameter: param.name.clone(),
            });
        }
        for example in &param.example_values {
            if !param.accepts_kind(example) {
                violations.push(Violation::ExampleKindMismatch {
                    tool: tool.to_string(),
                    parameter: param.name.clone(),
                    example: example.to_json().to_string(),
                });
            }
        }
    }
    violations
}

/// New content for one document layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "content")]
pub enum LevelContent {
    Text(String),
    Parameters(Vec<ParameterSpec>),
}

/// An immutable snapshot of the whole tool inventory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolKnowledgeBase {
    pub snapshot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_snapshot_id: Option<String>,
    tools: BTreeMap<String, ToolDocument>,
}

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("duplicate tool name {0:?}")]
    DuplicateTool(String),
    #[error("unknown tool names: {}", .0.join(", "))]
    UnknownTools(Vec<String>),
    #[error("modification level does not accept this content kind (tool {tool:?})")]
    LevelContentMismatch { tool: String },
    #[error("invalid content for {tool:?}: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidContent {
        tool: String,
        violations: Vec<Violation>,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed knowledge-base file {path}: {message}")]
    Malformed { path: String, message: String },
}

/// One changed field between two snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub tool: String,
    pub level: Level,
    pub before: Option<String>,
    pub after: Option<String>,
}

/// Manifest file listing a persisted snapshot's members.
#[derive(Debug, Serialize, Deserialize)]
struct KbManifest {
    snapshot_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parent_snapshot_id: Option<String>,
    tools: Vec<String>,
}

impl ToolKnowledgeBase {
    /// Builds a snapshot from documents. Names must be unique.
    pub fn new(snapshot_id: impl Into<String>, docs: Vec<ToolDocument>) -> Result<Self, KbError> {
        let mut tools = BTreeMap::new();
        for doc in docs {
            if tools.contains_key(&doc.name) {
                return Err(KbError::DuplicateTool(doc.name));
            }
            tools.insert(doc.name.clone(), doc);
        }
        Ok(ToolKnowledgeBase {
            snapshot_id: snapshot_id.into(),
            parent_snapshot_id: None,
            tools,
        })
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ToolDocument> {
        self.tools.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Documents in ascending name order.
    pub fn documents(&self) -> impl Iterator<Item = &ToolDocument> {
        self.tools.values()
    }

    pub fn tool_names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(|s| s.as_str())
    }

    /// True when both snapshots hold bit-identical documents (ids ignored).
    pub fn content_equal(&self, other: &ToolKnowledgeBase) -> bool {
        self.tools == other.tools
    }

    /// Returns a new snapshot with the given layer of the named tools
    /// replaced. Untouched documents are carried over unchanged; touched
    /// documents get `version + 1` and edited provenance. Replacing a layer
    /// with content equal to the current value leaves the document untouched.
    pub fn apply_modifications(
        &self,
        level: Level,
        mods: &BTreeMap<String, LevelContent>,
        iteration: usize,
    ) -> Result<ToolKnowledgeBase, KbError> {
        let unknown: Vec<String> = mods
            .keys()
            .filter(|name| !self.tools.contains_key(*name))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(KbError::UnknownTools(unknown));
        }
        // Validate before touching anything so a rejected edit has no effect.
        for (tool, content) in mods {
            match (level, content) {
                (Level::Retrieval | Level::Tool, LevelContent::Text(text)) => {
                    if text.trim().is_empty() {
                        let violation = if level == Level::Retrieval {
                            Violation::EmptyRetrievalContent { tool: tool.clone() }
                        } else {
                            Violation::EmptyDescription { tool: tool.clone() }
                        };
                        return Err(KbError::InvalidContent {
                            tool: tool.clone(),
                            violations: vec![violation],
                        });
                    }
                }
                (Level::Parameter, LevelContent::Parameters(params)) => {
                    let violations = validate_parameters(tool, params);
                    if !violations.is_empty() {
                        return Err(KbError::InvalidContent {
                            tool: tool.clone(),
                            violations,
                        });
                    }
                }
                _ => return Err(KbError::LevelContentMismatch { tool: tool.clone() }),
            }
        }

        let mut tools = self.tools.clone();
        for (tool, content) in mods {
            let doc = tools.get_mut(tool).expect("existence checked above");
            let changed = match (level, content) {
                (Level::Retrieval, LevelContent::Text(text)) => {
                    let changed = doc.retrieval_content != *text;
                    if changed {
                        doc.retrieval_content = text.clone();
                    }
                    changed
                }
                (Level::Tool, LevelContent::Text(text)) => {
                    let changed = doc.description != *text;
                    if changed {
                        doc.description = text.clone();
                    }
                    changed
                }
                (Level::Parameter, LevelContent::Parameters(params)) => {
                    let changed = doc.parameter_schema != *params;
                    if changed {
                        doc.parameter_schema = params.clone();
                    }
                    changed
                }
                _ => unreachable!("level/content agreement checked above"),
            };
            if changed {
                doc.version += 1;
                doc.provenance = Provenance::Edited { level, iteration };
            }
        }
        Ok(ToolKnowledgeBase {
            snapshot_id: fresh_snapshot_id(&self.snapshot_id, &tools),
            parent_snapshot_id: Some(self.snapshot_id.clone()),
            tools,
        })
    }

    /// Persists the snapshot as a manifest plus one JSON file per tool.
    pub fn save(&self, dir: &Path) -> Result<(), KbError> {
        let io_err = |path: &Path, source| KbError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let manifest = KbManifest {
            snapshot_id: self.snapshot_id.clone(),
            parent_snapshot_id: self.parent_snapshot_id.clone(),
            tools: self.tools.keys().cloned().collect(),
        };
        let manifest_path = dir.join("manifest.json");
        std::fs::write(
            &manifest_path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(|e| io_err(&manifest_path, e))?;
        for doc in self.tools.values() {
            let path = dir.join(format!("{}.json", doc.name));
            std::fs::write(
                &path,
                serde_json::to_string_pretty(doc).expect("doc serializes"),
            )
            .map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    /// Loads a snapshot persisted by [`ToolKnowledgeBase::save`].
    pub fn load(dir: &Path) -> Result<ToolKnowledgeBase, KbError> {
        let manifest_path = dir.join("manifest.json");
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| KbError::Io {
            path: manifest_path.display().to_string(),
            source: e,
        })?;
        let manifest: KbManifest = serde_json::from_str(&raw).map_err(|e| KbError::Malformed {
            path: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut tools = BTreeMap::new();
        for name in &manifest.tools {
            let path = dir.join(format!("{name}.json"));
            let raw = std::fs::read_to_string(&path).map_err(|e| KbError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let doc: ToolDocument = serde_json::from_str(&raw).map_err(|e| KbError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            if doc.name != *name {
                return Err(KbError::Malformed {
                    path: path.display().to_string(),
                    message: format!("document name {:?} does not match manifest entry", doc.name),
                });
            }
            tools.insert(doc.name.clone(), doc);
        }
        Ok(ToolKnowledgeBase {
            snapshot_id: manifest.snapshot_id,
            parent_snapshot_id: manifest.parent_snapshot_id,
            tools,
        })
    }
}

/// Content-addressed id so identical edits replayed from the same parent
/// produce the same snapshot id.
fn fresh_snapshot_id(parent: &str, tools: &BTreeMap<String, ToolDocument>) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(parent.as_bytes());
    for doc in tools.values() {
        hasher.update(serde_json::to_vec(doc).expect("doc serializes"));
    }
    let digest = hasher.finalize();
    format!("kb-{}", hex_prefix(&digest, 12))
}

pub(crate) fn hex_prefix(bytes: &[u8], len: usize) -> String {
    let mut out = String::with_capacity(len);
    for byte in bytes {
        use fmt::Write;
        write!(out, "{byte:02x}").expect("hex write");
        if out.len() >= len {
            out.truncate(len);
            break;
        }
    }
    out
}

/// Enumerates every changed field between two snapshots. Empty iff the
/// snapshots are content-equal. Tools present on only one side contribute one
/// entry per layer with the absent side reported as `None`.
pub fn diff_snapshots(a: &ToolKnowledgeBase, b: &ToolKnowledgeBase) -> Vec<DiffEntry> {
    let mut entries = Vec::new();
    let names: BTreeSet<&str> = a.tool_names().chain(b.tool_names()).collect();
    for name in names {
        match (a.get(name), b.get(name)) {
            (Some(da), Some(db)) => {
                if da.retrieval_content != db.retrieval_content {
                    entries.push(DiffEntry {
                        tool: name.to_string(),
                        level: Level::Retrieval,
                        before: Some(da.retrieval_content.clone()),
                        after: Some(db.retrieval_content.clone()),
                    });
                }
                if da.description != db.description {
                    entries.push(DiffEntry {
                        tool: name.to_string(),
                        level: Level::Tool,
                        before: Some(da.description.clone()),
                        after: Some(db.description.clone()),
                    });
                }
                if da.parameter_schema != db.parameter_schema {
                    entries.push(DiffEntry {
                        tool: name.to_string(),
                        level: Level::Parameter,
                        before: Some(render_schema(&da.parameter_schema)),
                        after: Some(render_schema(&db.parameter_schema)),
                    });
                }
            }
            (Some(da), None) => entries.extend(one_sided_entries(name, da, true)),
            (None, Some(db)) => entries.extend(one_sided_entries(name, db, false)),
            (None, None) => unreachable!("name came from one of the maps"),
        }
    }
    entries
}

fn one_sided_entries(name: &str, doc: &ToolDocument, present_in_a: bool) -> Vec<DiffEntry> {
    let wrap = |text: String| -> (Option<String>, Option<String>) {
        if present_in_a {
            (Some(text), None)
        } else {
            (None, Some(text))
        }
    };
    let (rb, ra) = wrap(doc.retrieval_content.clone());
    let (db, da) = wrap(doc.description.clone());
    let (pb, pa) = wrap(render_schema(&doc.parameter_schema));
    vec![
        DiffEntry {
            tool: name.to_string(),
            level: Level::Retrieval,
            before: rb,
            after: ra,
        },
        DiffEntry {
            tool: name.to_string(),
            level: Level::Tool,
            before: db,
            after: da,
        },
        DiffEntry {
            tool: name.to_string(),
            level: Level::Parameter,
            before: pb,
            after: pa,
        },
    ]
}

pub(crate) fn render_schema(params: &[ParameterSpec]) -> String {
    serde_json::to_string(params).expect("schema serializes")
}
