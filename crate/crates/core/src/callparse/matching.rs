//! Strict schema-aware conformance matching for tool calls.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MatchPolicy, OptionalParamRule, StringNormalization, ToolCall, Value};
use crate::tooldoc::{ToolDocument, ToolKnowledgeBase};

/// One reason a predicted call failed to match the expected call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MismatchReason {
    WrongName {
        expected: String,
        actual: String,
    },
    UnknownParameter {
        parameter: String,
    },
    KindMismatch {
        parameter: String,
        expected_kind: String,
        actual: String,
    },
    MissingRequired {
        parameter: String,
    },
    RequiredNotInExpected {
        parameter: String,
    },
    MissingParameter {
        parameter: String,
    },
    UnexpectedParameter {
        parameter: String,
    },
    ValueMismatch {
        parameter: String,
        expected: String,
        actual: String,
    },
    ExpectedOutsideSchema {
        parameter: String,
    },
}

impl std::fmt::Display for MismatchReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MismatchReason::WrongName { expected, actual } => {
                write!(f, "wrong tool name: expected {expected}, got {actual}")
            }
            MismatchReason::UnknownParameter { parameter } => {
                write!(f, "unknown parameter {parameter}")
            }
            MismatchReason::KindMismatch {
                parameter,
                expected_kind,
                actual,
            } => {
                write!(
                    f,
                    "parameter {parameter} must be {expected_kind}, got {actual}"
                )
            }
            MismatchReason::MissingRequired { parameter } => {
                write!(f, "missing required {parameter}")
            }
            MismatchReason::RequiredNotInExpected { parameter } => {
                write!(
                    f,
                    "required parameter {parameter} absent from the expected call"
                )
            }
            MismatchReason::MissingParameter { parameter } => {
                write!(f, "missing parameter {parameter}")
            }
            MismatchReason::UnexpectedParameter { parameter } => {
                write!(f, "unexpected parameter {parameter}")
            }
            MismatchReason::ValueMismatch {
                parameter,
                expected,
                actual,
            } => {
                write!(
                    f,
                    "parameter {parameter}: expected {expected}, got {actual}"
                )
            }
            MismatchReason::ExpectedOutsideSchema { parameter } => {
                write!(
                    f,
                    "expected call uses parameter {parameter} outside the schema"
                )
            }
        }
    }
}

/// Verdict of a single-call conformance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MatchVerdict {
    Match,
    Mismatch(Vec<MismatchReason>),
}

impl MatchVerdict {
    pub fn is_match(&self) -> bool {
        matches!(self, MatchVerdict::Match)
    }

    pub fn reasons(&self) -> &[MismatchReason] {
        match self {
            MatchVerdict::Match => &[],
            MatchVerdict::Mismatch(reasons) => reasons,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("expected call names tool {0:?} which is not in the knowledge base")]
    UnknownExpectedTool(String),
}

fn normalize_string(s: &str, policy: &MatchPolicy) -> String {
    match policy.string_normalization {
        StringNormalization::Exact => s.to_string(),
        StringNormalization::CasefoldTrim => {
            let mut t = s.trim();
            for quote in ['\'', '"'] {
                if t.len() >= 2 && t.starts_with(quote) && t.ends_with(quote) {
                    t = &t[1..t.len() - 1];
                    break;
                }
            }
            t.trim().to_lowercase()
        }
    }
}

fn numeric_equal(a: f64, b: f64, tolerance: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tolerance * a.abs().max(b.abs())
}

/// Value equality under the policy: normalized strings, tolerant reals,
/// exact integers and booleans, order-sensitive lists, key-wise maps.
pub fn value_equal(a: &Value, b: &Value, policy: &MatchPolicy) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x == y,
        (Value::Int(x), Value::Real(y)) | (Value::Real(y), Value::Int(x)) => {
            numeric_equal(*x as f64, *y, policy.real_tolerance)
        }
        (Value::Real(x), Value::Real(y)) => numeric_equal(*x, *y, policy.real_tolerance),
        (Value::Str(x), Value::Str(y)) => {
            normalize_string(x, policy) == normalize_string(y, policy)
        }
        (Value::Bool(x), Value::Bool(y)) => x == y,
        (Value::List(xs), Value::List(ys)) => {
            xs.len() == ys.len()
                && xs
                    .iter()
                    .zip(ys.iter())
                    .all(|(x, y)| value_equal(x, y, policy))
        }
        (Value::Map(xs), Value::Map(ys)) => {
            xs.len() == ys.len()
                && xs.iter().all(|(k, x)| {
                    ys.get(k)
                        .map(|y| value_equal(x, y, policy))
                        .unwrap_or(false)
                })
        }
        _ => false,
    }
}

fn render_value(value: &Value) -> String {
    value.to_json().to_string()
}

/// Checks one predicted call against one expected call under the schema.
///
/// Mismatches are verdicts, not errors: the full reason list is returned for
/// diagnostic records.
pub fn match_call(
    predicted: &ToolCall,
    expected: &ToolCall,
    schema: &ToolDocument,
    policy: &MatchPolicy,
) -> MatchVerdict {
    debug_assert_eq!(
        expected.name, schema.name,
        "caller must pass the expected call's schema"
    );
    if predicted.name != expected.name {
        return MatchVerdict::Mismatch(vec![MismatchReason::WrongName {
            expected: expected.name.clone(),
            actual: predicted.name.clone(),
        }]);
    }

    let mut reasons = Vec::new();
    for param in predicted.args.keys() {
        if schema.parameter(param).is_none() {
            reasons.push(MismatchReason::UnknownParameter {
                parameter: param.clone(),
            });
        }
    }
    for param in expected.args.keys() {
        if schema.parameter(param).is_none() {
            reasons.push(MismatchReason::ExpectedOutsideSchema {
                parameter: param.clone(),
            });
        }
    }
    for (param, value) in &predicted.args {
        if let Some(spec) = schema.parameter(param) {
            if !spec.accepts_kind(value) {
                reasons.push(MismatchReason::KindMismatch {
                    parameter: param.clone(),
                    expected_kind: spec.value_kind.as_str().to_string(),
                    actual: render_value(value),
                });
            }
        }
    }

    let contextual = policy.optional_param_rule == OptionalParamRule::Contextual;
    for spec in &schema.parameter_schema {
        let predicted_value = predicted.args.get(&spec.name);
        let expected_value = expected.args.get(&spec.name);
        if spec.required {
            match (predicted_value, expected_value) {
                (None, _) => reasons.push(MismatchReason::MissingRequired {
                    parameter: spec.name.clone(),
                }),
                (Some(_), None) => reasons.push(MismatchReason::RequiredNotInExpected {
                    parameter: spec.name.clone(),
                }),
                (Some(p), Some(e)) => {
                    if !value_equal(p, e, policy) {
                        reasons.push(MismatchReason::ValueMismatch {
                            parameter: spec.name.clone(),
                            expected: render_value(e),
                            actual: render_value(p),
                        });
                    }
                }
            }
        } else {
            match (predicted_value, expected_value) {
                (None, None) => {}
                (Some(p), Some(e)) => {
                    if !value_equal(p, e, policy) {
                        reasons.push(MismatchReason::ValueMismatch {
                            parameter: spec.name.clone(),
                            expected: render_value(e),
                            actual: render_value(p),
                        });
                    }
                }
                // Omitted optionals match a value equal to the schema default.
                (None, Some(e)) => {
                    let default_covers = contextual
                        && spec
                            .default_value
                            .as_ref()
                            .map(|d| value_equal(d, e, policy))
                            .unwrap_or(false);
                    if !default_covers {
                        reasons.push(MismatchReason::MissingParameter {
                            parameter: spec.name.clone(),
                        });
                    }
                }
                (Some(p), None) => {
                    let default_covers = contextual
                        && spec
                            .default_value
                            .as_ref()
                            .map(|d| value_equal(d, p, policy))
                            .unwrap_or(false);
                    if !default_covers {
                        reasons.push(MismatchReason::UnexpectedParameter {
                            parameter: spec.name.clone(),
                        });
                    }
                }
            }
        }
    }

    if reasons.is_empty() {
        MatchVerdict::Match
    } else {
        MatchVerdict::Mismatch(reasons)
    }
}

/// Multiset equality of call names, arguments ignored.
pub fn tool_name_set_match(predicted: &[ToolCall], expected: &[ToolCall]) -> bool {
    let count = |calls: &[ToolCall]| -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for call in calls {
            *counts.entry(call.name.clone()).or_insert(0) += 1;
        }
        counts
    };
    count(predicted) == count(expected)
}

/// One pairing decision inside a set-match outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedCalls {
    pub predicted_index: usize,
    pub expected_index: usize,
    pub matched: bool,
}

/// Outcome of matching two call multisets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMatchOutcome {
    /// All-or-nothing verdict: every expected call matched, none left over.
    pub is_match: bool,
    pub pairing: Vec<PairedCalls>,
    /// Fraction of expected required parameters correctly filled under the
    /// best pairing. 1.0 whenever `is_match`.
    pub param_coverage_ratio: f64,
}

struct PairScore {
    matched: bool,
    filled: usize,
}

/// Matches predicted against expected as order-insensitive multisets.
///
/// The best pairing maximizes the number of fully matched pairs first and the
/// count of correctly filled required parameters second. Small instances are
/// solved exhaustively; larger ones go through an assignment solver that is
/// exact for the same objective.
pub fn match_call_set(
    predicted: &[ToolCall],
    expected: &[ToolCall],
    kb: &ToolKnowledgeBase,
    policy: &MatchPolicy,
) -> Result<SetMatchOutcome, MatchError> {
    for call in expected {
        if !kb.contains(&call.name) {
            return Err(MatchError::UnknownExpectedTool(call.name.clone()));
        }
    }

    let total_required: usize = expected
        .iter()
        .map(|call| {
            kb.get(&call.name)
                .expect("checked above")
                .parameter_schema
                .iter()
                .filter(|p| p.required)
                .count()
        })
        .sum();

    if predicted.is_empty() && expected.is_empty() {
        return Ok(SetMatchOutcome {
            is_match: true,
            pairing: Vec::new(),
            param_coverage_ratio: 1.0,
        });
    }

    let mut scores: Vec<Vec<PairScore>> = Vec::with_capacity(predicted.len());
    for p in predicted {
        let mut row = Vec::with_capacity(expected.len());
        for e in expected {
            let schema = kb.get(&e.name).expect("checked above");
            if p.name != e.name {
                row.push(PairScore {
                    matched: false,
                    filled: 0,
                });
                continue;
            }
            let matched = match_call(p, e, schema, policy).is_match();
            let filled = schema
                .parameter_schema
                .iter()
                .filter(|spec| spec.required)
                .filter(
                    |spec| match (p.args.get(&spec.name), e.args.get(&spec.name)) {
                        (Some(pv), Some(ev)) => value_equal(pv, ev, policy),
                        _ => false,
                    },
                )
                .count();
            row.push(PairScore { matched, filled });
        }
        scores.push(row);
    }

    // Lexicographic (matched, filled) folded into one weight.
    let big = (total_required + 1) as i64;
    let weight = |i: usize, j: usize| -> i64 {
        let s = &scores[i][j];
        (s.matched as i64) * big + s.filled as i64
    };

    let assignment = if predicted.len().max(expected.len()) <= 6 {
        exhaustive_best_assignment(predicted.len(), expected.len(), &weight)
    } else {
        hungarian_best_assignment(predicted.len(), expected.len(), &weight)
    };

    let mut matched_pairs = 0usize;
    let mut filled_total = 0usize;
    let mut pairing = Vec::new();
    for &(i, j) in &assignment {
        let score = &scores[i][j];
        matched_pairs += score.matched as usize;
        filled_total += score.filled;
        pairing.push(PairedCalls {
            predicted_index: i,
            expected_index: j,
            matched: score.matched,
        });
    }

    let is_match = predicted.len() == expected.len() && matched_pairs == expected.len();
    let param_coverage_ratio = if total_required == 0 {
        1.0
    } else {
        filled_total as f64 / total_required as f64
    };
    Ok(SetMatchOutcome {
        is_match,
        pairing,
        param_coverage_ratio,
    })
}

/// Enumerates every injective assignment of the smaller side into the larger
/// and keeps the maximum-weight one.
fn exhaustive_best_assignment(
    n_pred: usize,
    n_exp: usize,
    weight: &dyn Fn(usize, usize) -> i64,
) -> Vec<(usize, usize)> {
    if n_pred == 0 || n_exp == 0 {
        return Vec::new();
    }
    let pred_is_small = n_pred <= n_exp;
    let (small, large) = if pred_is_small {
        (n_pred, n_exp)
    } else {
        (n_exp, n_pred)
    };

    struct Search<'a> {
        small: usize,
        large: usize,
        pred_is_small: bool,
        weight: &'a dyn Fn(usize, usize) -> i64,
        used: Vec<bool>,
        current: Vec<usize>,
        best_weight: i64,
        best: Vec<usize>,
    }

    impl Search<'_> {
        fn walk(&mut self, idx: usize, acc: i64) {
            if idx == self.small {
                if acc > self.best_weight {
                    self.best_weight = acc;
                    self.best = self.current.clone();
                }
                return;
            }
            for candidate in 0..self.large {
                if self.used[candidate] {
                    continue;
                }
                let w = if self.pred_is_small {
                    (self.weight)(idx, candidate)
                } else {
                    (self.weight)(candidate, idx)
                };
                self.used[candidate] = true;
                self.current.push(candidate);
                self.walk(idx + 1, acc + w);
                self.current.pop();
                self.used[candidate] = false;
            }
        }
    }

    let mut search = Search {
        small,
        large,
        pred_is_small,
        weight,
        used: vec![false; large],
        current: Vec::with_capacity(small),
        best_weight: i64::MIN,
        best: Vec::new(),
    };
    search.walk(0, 0);

    search
        .best
        .iter()
        .enumerate()
        .map(|(s, &l)| if pred_is_small { (s, l) } else { (l, s) })
        .collect()
}

/// Exact maximum-weight assignment via the Hungarian algorithm on a padded
/// square matrix. Pads with zero-weight dummy pairs, which never beat a real
/// pair under the folded lexicographic weight.
fn hungarian_best_assignment(
    n_pred: usize,
    n_exp: usize,
    weight: &dyn Fn(usize, usize) -> i64,
) -> Vec<(usize, usize)> {
    let n = n_pred.max(n_exp);
    if n == 0 {
        return Vec::new();
    }
    // Minimize negated weight.
    let cost = |i: usize, j: usize| -> i64 {
        if i < n_pred && j < n_exp {
            -weight(i, j)
        } else {
            0
        }
    };

    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut assigned_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        assigned_row[0] = row;
        let mut current_col = 0usize;
        let mut min_reduced = vec![inf; n + 1];
        let mut visited = vec![false; n + 1];
        loop {
            visited[current_col] = true;
            let active_row = assigned_row[current_col];
            let mut delta = inf;
            let mut next_col = 0usize;
            for col in 1..=n {
                if visited[col] {
                    continue;
                }
                let reduced = cost(active_row - 1, col - 1) - u[active_row] - v[col];
                if reduced < min_reduced[col] {
                    min_reduced[col] = reduced;
                    way[col] = current_col;
                }
                if min_reduced[col] < delta {
                    delta = min_reduced[col];
                    next_col = col;
                }
            }
            for col in 0..=n {
                if visited[col] {
                    u[assigned_row[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_reduced[col] -= delta;
                }
            }
            current_col = next_col;
            if assigned_row[current_col] == 0 {
                break;
            }
        }
        loop {
            let prev_col = way[current_col];
            assigned_row[current_col] = assigned_row[prev_col];
            current_col = prev_col;
            if current_col == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    for (col, &row) in assigned_row.iter().enumerate().skip(1) {
        if row >= 1 && row - 1 < n_pred && col - 1 < n_exp {
            pairs.push((row - 1, col - 1));
        }
    }
    pairs.sort_unstable();
    pairs
}
