//! Parsing model outputs into canonical tool calls and matching them against
//! ground truth under a strict, schema-aware policy.
//!
//! Strictness is deliberate: a string `"12"` never matches the integer `12`,
//! unknown parameters fail the call, and multi-call outputs match
//! all-or-nothing as order-insensitive multisets.

mod matching;
mod parse;

pub use matching::{
    match_call, match_call_set, tool_name_set_match, value_equal, MatchError, MatchVerdict,
    MismatchReason, PairedCalls, SetMatchOutcome,
};
pub use parse::{extract_call_expressions, parse_call_expression, ParseError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tooldoc::ValueKind;

/// A parsed argument value. Reals are always finite; integral reals are
/// canonicalized to integers on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum Value {
    Str(String),
    Int(i64),
    Real(f64),
    Bool(bool),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    /// Canonical form: trimmed strings, integral reals stored as integers.
    pub fn canonicalize(self) -> Value {
        match self {
            Value::Str(s) => Value::Str(s.trim().to_string()),
            Value::Real(r) => {
                if r.is_finite() && r.fract() == 0.0 && r.abs() <= i64::MAX as f64 && r.abs() < 9e15
                {
                    Value::Int(r as i64)
                } else {
                    Value::Real(r)
                }
            }
            Value::List(items) => Value::List(items.into_iter().map(Value::canonicalize).collect()),
            Value::Map(entries) => Value::Map(
                entries
                    .into_iter()
                    .map(|(k, v)| (k, v.canonicalize()))
                    .collect(),
            ),
            other => other,
        }
    }

    pub fn conforms_to(&self, kind: ValueKind) -> bool {
        matches!(
            (self, kind),
            (Value::Str(_), ValueKind::String)
                | (Value::Int(_), ValueKind::Integer | ValueKind::Number)
                | (Value::Real(_), ValueKind::Number)
                | (Value::Bool(_), ValueKind::Boolean)
                | (Value::List(_), ValueKind::Array)
                | (Value::Map(_), ValueKind::Object)
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.clone().into()
    }
}

impl From<Value> for serde_json::Value {
    fn from(value: Value) -> serde_json::Value {
        match value {
            Value::Str(s) => serde_json::Value::String(s),
            Value::Int(i) => serde_json::Value::Number(i.into()),
            Value::Real(r) => serde_json::Number::from_f64(r)
                .map(serde_json::Value::Number)
                .expect("reals are finite"),
            Value::Bool(b) => serde_json::Value::Bool(b),
            Value::List(items) => {
                serde_json::Value::Array(items.into_iter().map(Into::into).collect())
            }
            Value::Map(entries) => {
                serde_json::Value::Object(entries.into_iter().map(|(k, v)| (k, v.into())).collect())
            }
        }
    }
}

impl TryFrom<serde_json::Value> for Value {
    type Error = String;

    fn try_from(value: serde_json::Value) -> Result<Value, String> {
        let converted = match value {
            serde_json::Value::Null => return Err("null values are not supported".to_string()),
            serde_json::Value::String(s) => Value::Str(s),
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Value::Int(i)
                } else if let Some(f) = n.as_f64() {
                    if !f.is_finite() {
                        return Err(format!("non-finite number {n}"));
                    }
                    Value::Real(f)
                } else {
                    return Err(format!("unrepresentable number {n}"));
                }
            }
            serde_json::Value::Bool(b) => Value::Bool(b),
            serde_json::Value::Array(items) => Value::List(
                items
                    .into_iter()
                    .map(Value::try_from)
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            serde_json::Value::Object(entries) => {
                let mut map = BTreeMap::new();
                for (k, v) in entries {
                    map.insert(k, Value::try_from(v)?);
                }
                Value::Map(map)
            }
        };
        Ok(converted.canonicalize())
    }
}

/// A canonical `(name, args)` pair: the unit of prediction and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawToolCall")]
pub struct ToolCall {
    pub name: String,
    #[serde(rename = "arguments")]
    pub args: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawToolCall {
    name: String,
    #[serde(default, alias = "args")]
    arguments: BTreeMap<String, Value>,
}

impl From<RawToolCall> for ToolCall {
    fn from(raw: RawToolCall) -> ToolCall {
        ToolCall::new(raw.name, raw.arguments)
    }
}

impl ToolCall {
    pub fn new(name: impl Into<String>, args: BTreeMap<String, Value>) -> ToolCall {
        ToolCall {
            name: name.into(),
            args: args
                .into_iter()
                .map(|(k, v)| (k, v.canonicalize()))
                .collect(),
        }
    }

    /// The structured output form: one element of the JSON call array.
    pub fn to_structured_json(&self) -> serde_json::Value {
        serde_json::json!({
            "name": self.name,
            "arguments": serde_json::Value::Object(
                self.args.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()
            ),
        })
    }

    /// Order-normalized serialization used for grouping identical answers.
    pub fn canonical_string(&self) -> String {
        self.to_structured_json().to_string()
    }
}

/// Serializes calls as the structured model-output form: a JSON array of
/// `{"name": ..., "arguments": {...}}` objects.
pub fn calls_to_structured_json(calls: &[ToolCall]) -> serde_json::Value {
    serde_json::Value::Array(calls.iter().map(ToolCall::to_structured_json).collect())
}

/// How string values are normalized before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StringNormalization {
    Exact,
    /// Trim, strip one layer of matching surrounding quotes, casefold.
    #[default]
    CasefoldTrim,
}

/// How optional parameters are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptionalParamRule {
    /// Argument sets must agree exactly.
    Strict,
    /// An omitted optional parameter matches a value equal to the schema
    /// default, on either side.
    #[default]
    Contextual,
}

/// Multi-call verdict composition. Deliberately a closed single choice:
/// partial credit lives in the coverage ratio, never in the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MultiCallRule {
    #[default]
    AllOrNothing,
}

/// Call-order handling: both sides are multisets, order carries no meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OrderRule {
    #[default]
    OrderInsensitiveMultiset,
}

/// Matching policy for call conformance checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPolicy {
    pub string_normalization: StringNormalization,
    pub optional_param_rule: OptionalParamRule,
    pub multi_call_rule: MultiCallRule,
    pub order_rule: OrderRule,
    /// Relative tolerance for real-valued comparisons. Integers compare
    /// exactly.
    pub real_tolerance: f64,
}

impl Default for MatchPolicy {
    fn default() -> Self {
        MatchPolicy {
            string_normalization: StringNormalization::CasefoldTrim,
            optional_param_rule: OptionalParamRule::Contextual,
            multi_call_rule: MultiCallRule::AllOrNothing,
            order_rule: OrderRule::OrderInsensitiveMultiset,
            real_tolerance: 1e-9,
        }
    }
}

impl MatchPolicy {
    pub fn strict_strings(mut self) -> Self {
        self.string_normalization = StringNormalization::Exact;
        self
    }

    pub fn strict_optionals(mut self) -> Self {
        self.optional_param_rule = OptionalParamRule::Strict;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization_trims_strings_and_integerizes_reals() {
        assert_eq!(
            Value::Str("  x ".into()).canonicalize(),
            Value::Str("x".into())
        );
        assert_eq!(Value::Real(12.0).canonicalize(), Value::Int(12));
        assert_eq!(Value::Real(12.5).canonicalize(), Value::Real(12.5));
        assert_eq!(
            Value::List(vec![Value::Real(2.0), Value::Real(2.5)]).canonicalize(),
            Value::List(vec![Value::Int(2), Value::Real(2.5)])
        );
    }

    #[test]
    fn json_round_trip_preserves_canonical_values() {
        let call = ToolCall::new(
            "f",
            BTreeMap::from([
                ("a".to_string(), Value::Int(1)),
                (
                    "b".to_string(),
                    Value::List(vec![Value::Real(2.5), Value::Bool(true)]),
                ),
            ]),
        );
        let json = serde_json::to_string(&call.to_structured_json()).unwrap();
        let back: ToolCall = serde_json::from_str(&json).unwrap();
        assert_eq!(back, call);
    }

    #[test]
    fn null_json_values_are_rejected() {
        let err = Value::try_from(serde_json::json!(null)).unwrap_err();
        assert!(err.contains("null"));
    }
}
