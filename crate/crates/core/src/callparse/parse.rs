//! Call-expression and structured-form parsing.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{ToolCall, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("duplicate keyword argument {parameter:?} at byte {position}")]
    DuplicateKeyword { position: usize, parameter: String },
    #[error("positional argument at byte {position}; arguments must be keyword=value")]
    PositionalArgument { position: usize },
    #[error("malformed structured call form: {0}")]
    Structured(String),
}

/// Parses a complete model output into calls.
///
/// Accepts either keyword-argument call expressions (`f(a=1, b=[2, 3])`,
/// several separated by commas or newlines) or the structured JSON form (an
/// array of `{"name", "arguments"}` objects). Whitespace-only input yields an
/// empty list. Anything else is an error; use [`extract_call_expressions`]
/// for outputs that mix prose with calls.
pub fn parse_call_expression(text: &str) -> Result<Vec<ToolCall>, ParseError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    let stripped = strip_code_fence(trimmed);
    if stripped.starts_with('[') || stripped.starts_with('{') {
        return parse_structured(stripped);
    }
    let mut parser = Parser::new(text);
    let calls = parser.parse_call_list()?;
    parser.skip_separators();
    if !parser.at_end() {
        return Err(parser.syntax_error("trailing input after call expressions"));
    }
    Ok(calls)
}

/// Pulls every parseable call out of free-form text.
///
/// Tries the strict path first. Otherwise scans for a structured JSON array
/// of calls, then for `identifier(...)` regions, parsing each independently
/// and keeping the successes in textual order. Never errors; prose without
/// calls yields an empty list.
pub fn extract_call_expressions(text: &str) -> Vec<ToolCall> {
    if let Ok(calls) = parse_call_expression(text) {
        return calls;
    }
    if let Some(calls) = scan_structured_array(text) {
        return calls;
    }
    let mut calls = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if let Some((call, end)) = try_call_at(text, i) {
            calls.push(call);
            i = end;
        } else {
            i += 1;
        }
    }
    calls
}

/// Attempts to parse one call starting at an identifier boundary.
fn try_call_at(text: &str, at: usize) -> Option<(ToolCall, usize)> {
    let bytes = text.as_bytes();
    if !is_ident_start(bytes[at] as char) {
        return None;
    }
    if at > 0 && is_ident_continue(bytes[at - 1] as char) {
        return None;
    }
    let mut parser = Parser::new(text);
    parser.pos = at;
    match parser.parse_call() {
        Ok(call) => Some((call, parser.pos)),
        Err(_) => None,
    }
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        if let Some(body) = rest.strip_suffix("```") {
            return body.trim();
        }
    }
    trimmed
}

#[derive(Deserialize)]
struct StructuredCall {
    name: String,
    #[serde(default, alias = "args", alias = "parameters")]
    arguments: serde_json::Map<String, serde_json::Value>,
}

fn structured_to_call(raw: StructuredCall) -> Result<ToolCall, ParseError> {
    let mut args = BTreeMap::new();
    for (key, value) in raw.arguments {
        let converted = Value::try_from(value)
            .map_err(|e| ParseError::Structured(format!("argument {key:?}: {e}")))?;
        args.insert(key, converted);
    }
    Ok(ToolCall::new(raw.name, args))
}

fn parse_structured(text: &str) -> Result<Vec<ToolCall>, ParseError> {
    let parsed: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ParseError::Structured(e.to_string()))?;
    match parsed {
        serde_json::Value::Array(items) => items
            .into_iter()
            .map(|item| {
                let raw: StructuredCall = serde_json::from_value(item)
                    .map_err(|e| ParseError::Structured(e.to_string()))?;
                structured_to_call(raw)
            })
            .collect(),
        object @ serde_json::Value::Object(_) => {
            let raw: StructuredCall = serde_json::from_value(object)
                .map_err(|e| ParseError::Structured(e.to_string()))?;
            Ok(vec![structured_to_call(raw)?])
        }
        other => Err(ParseError::Structured(format!(
            "expected array of calls, got {other}"
        ))),
    }
}

/// Finds the first JSON array in the text whose elements all look like calls.
fn scan_structured_array(text: &str) -> Option<Vec<ToolCall>> {
    let bytes = text.as_bytes();
    for (i, &byte) in bytes.iter().enumerate() {
        if byte != b'[' {
            continue;
        }
        let mut deserializer = serde_json::Deserializer::from_str(&text[i..]);
        if let Ok(serde_json::Value::Array(items)) =
            serde_json::Value::deserialize(&mut deserializer)
        {
            if items.is_empty() {
                continue;
            }
            let calls: Result<Vec<ToolCall>, ParseError> = items
                .into_iter()
                .map(|item| {
                    let raw: StructuredCall = serde_json::from_value(item)
                        .map_err(|e| ParseError::Structured(e.to_string()))?;
                    structured_to_call(raw)
                })
                .collect();
            if let Ok(calls) = calls {
                return Some(calls);
            }
        }
    }
    None
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser { text, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn syntax_error(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            position: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() && c != '\n' {
                self.bump();
            } else {
                break;
            }
        }
    }

    /// Skips whitespace, newlines, and call separators (commas, semicolons).
    fn skip_separators(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == ',' || c == ';' {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn parse_call_list(&mut self) -> Result<Vec<ToolCall>, ParseError> {
        let mut calls = Vec::new();
        self.skip_separators();
        loop {
            calls.push(self.parse_call()?);
            let before = self.pos;
            self.skip_separators();
            if self.at_end() {
                break;
            }
            if self.pos == before {
                return Err(self.syntax_error("expected ',' or newline between calls"));
            }
        }
        Ok(calls)
    }

    fn parse_call(&mut self) -> Result<ToolCall, ParseError> {
        self.skip_ws();
        let name = self.parse_identifier()?;
        self.skip_ws();
        if self.peek() != Some('(') {
            return Err(self.syntax_error("expected '(' after tool name"));
        }
        self.bump();
        let mut args = BTreeMap::new();
        self.skip_all_ws();
        if self.peek() == Some(')') {
            self.bump();
            return Ok(ToolCall::new(name, args));
        }
        loop {
            self.skip_all_ws();
            let key_pos = self.pos;
            // A literal in key position is a positional argument.
            if matches!(self.peek(), Some(c) if !is_ident_start(c)) {
                return Err(ParseError::PositionalArgument { position: key_pos });
            }
            let key = self.parse_argument_key()?;
            self.skip_all_ws();
            if self.peek() != Some('=') {
                return Err(ParseError::PositionalArgument { position: key_pos });
            }
            self.bump();
            self.skip_all_ws();
            let value = self.parse_value()?;
            if args.contains_key(&key) {
                return Err(ParseError::DuplicateKeyword {
                    position: key_pos,
                    parameter: key,
                });
            }
            args.insert(key, value);
            self.skip_all_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(')') => {
                    self.bump();
                    break;
                }
                _ => return Err(self.syntax_error("expected ',' or ')' in argument list")),
            }
        }
        Ok(ToolCall::new(name, args))
    }

    fn skip_all_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn parse_identifier(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        match self.peek() {
            Some(c) if is_ident_start(c) => {
                self.bump();
            }
            _ => return Err(self.syntax_error("expected identifier")),
        }
        while let Some(c) = self.peek() {
            if is_ident_continue(c) {
                self.bump();
            } else {
                break;
            }
        }
        Ok(self.text[start..self.pos].to_string())
    }

    /// Argument keys are identifiers without the dotted-path extension.
    fn parse_argument_key(&mut self) -> Result<String, ParseError> {
        let ident = self.parse_identifier()?;
        if ident.contains('.') {
            return Err(self.syntax_error("argument names may not contain '.'"));
        }
        Ok(ident)
    }

    fn parse_value(&mut self) -> Result<Value, ParseError> {
        match self.peek() {
            Some('\'') | Some('"') => self.parse_string(),
            Some('[') => self.parse_list(),
            Some('{') => self.parse_dict(),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' => self.parse_number(),
            Some(c) if is_ident_start(c) => self.parse_word_value(),
            _ => Err(self.syntax_error("expected a literal value")),
        }
    }

    fn parse_string(&mut self) -> Result<Value, ParseError> {
        let quote = self.bump().expect("caller checked quote");
        let mut out = String::new();
        loop {
            match self.bump() {
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some(c) => out.push(c),
                    None => return Err(self.syntax_error("unterminated escape in string")),
                },
                Some(c) if c == quote => break,
                Some(c) => out.push(c),
                None => return Err(self.syntax_error("unterminated string literal")),
            }
        }
        Ok(Value::Str(out))
    }

    fn parse_number(&mut self) -> Result<Value, ParseError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-') | Some('+')) {
            self.bump();
        }
        let mut saw_digit = false;
        let mut is_real = false;
        while let Some(c) = self.peek() {
            match c {
                '0'..='9' => {
                    saw_digit = true;
                    self.bump();
                }
                '.' => {
                    is_real = true;
                    self.bump();
                }
                'e' | 'E' => {
                    is_real = true;
                    self.bump();
                    if matches!(self.peek(), Some('-') | Some('+')) {
                        self.bump();
                    }
                }
                _ => break,
            }
        }
        if !saw_digit {
            return Err(self.syntax_error("malformed number literal"));
        }
        let literal = &self.text[start..self.pos];
        if is_real {
            let value: f64 = literal
                .parse()
                .map_err(|_| self.syntax_error(format!("malformed number {literal:?}")))?;
            if !value.is_finite() {
                return Err(self.syntax_error(format!("non-finite number {literal:?}")));
            }
            Ok(Value::Real(value).canonicalize())
        } else {
            let value: i64 = literal
                .parse()
                .map_err(|_| self.syntax_error(format!("integer out of range {literal:?}")))?;
            Ok(Value::Int(value))
        }
    }

    fn parse_word_value(&mut self) -> Result<Value, ParseError> {
        let start = self.pos;
        let word = self.parse_identifier()?;
        match word.as_str() {
            "true" | "True" => Ok(Value::Bool(true)),
            "false" | "False" => Ok(Value::Bool(false)),
            other => {
                self.pos = start;
                Err(self.syntax_error(format!("unsupported bare word {other:?}")))
            }
        }
    }

    fn parse_list(&mut self) -> Result<Value, ParseError> {
        self.bump();
        let mut items = Vec::new();
        self.skip_all_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(Value::List(items));
        }
        loop {
            self.skip_all_ws();
            items.push(self.parse_value()?);
            self.skip_all_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(']') => {
                    self.bump();
                    break;
                }
                _ => return Err(self.syntax_error("expected ',' or ']' in list")),
            }
        }
        Ok(Value::List(items))
    }

    fn parse_dict(&mut self) -> Result<Value, ParseError> {
        self.bump();
        let mut entries = BTreeMap::new();
        self.skip_all_ws();
        if self.peek() == Some('}') {
            self.bump();
            return Ok(Value::Map(entries));
        }
        loop {
            self.skip_all_ws();
            let key = match self.peek() {
                Some('\'') | Some('"') => match self.parse_string()? {
                    Value::Str(s) => s,
                    _ => unreachable!("parse_string returns Str"),
                },
                Some(c) if is_ident_start(c) => self.parse_identifier()?,
                _ => return Err(self.syntax_error("expected map key")),
            };
            self.skip_all_ws();
            if self.peek() != Some(':') {
                return Err(self.syntax_error("expected ':' after map key"));
            }
            self.bump();
            self.skip_all_ws();
            let value = self.parse_value()?;
            entries.insert(key, value);
            self.skip_all_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some('}') => {
                    self.bump();
                    break;
                }
                _ => return Err(self.syntax_error("expected ',' or '}' in map")),
            }
        }
        Ok(Value::Map(entries))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int_list(values: &[i64]) -> Value {
        Value::List(values.iter().map(|v| Value::Int(*v)).collect())
    }

    #[test]
    fn parses_keyword_call_with_list_argument() {
        let calls =
            parse_call_expression("find_pairs_with_sum(numbers=[1,2,3,4,5,6,7,8], target_sum=12)")
                .unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].name, "find_pairs_with_sum");
        assert_eq!(
            calls[0].args["numbers"],
            int_list(&[1, 2, 3, 4, 5, 6, 7, 8])
        );
        assert_eq!(calls[0].args["target_sum"], Value::Int(12));
    }

    #[test]
    fn empty_input_yields_no_calls() {
        assert_eq!(parse_call_expression("").unwrap(), Vec::new());
        assert_eq!(parse_call_expression("   \n ").unwrap(), Vec::new());
    }

    #[test]
    fn newline_separated_calls_come_back_in_order() {
        let calls =
            parse_call_expression("whois(domain='yahoo.com')\nwhois(domain='microsoft.com')")
                .unwrap();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].args["domain"], Value::Str("yahoo.com".into()));
        assert_eq!(calls[1].args["domain"], Value::Str("microsoft.com".into()));
    }

    #[test]
    fn comma_separated_calls_are_split() {
        let calls = parse_call_expression("f(a=1), g(b=2)").unwrap();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].name, "f");
        assert_eq!(calls[1].name, "g");
    }

    #[test]
    fn duplicate_keyword_is_an_error_naming_the_parameter() {
        match parse_call_expression("f(a=1, a=2)") {
            Err(ParseError::DuplicateKeyword { parameter, .. }) => assert_eq!(parameter, "a"),
            other => panic!("expected duplicate keyword error, got {other:?}"),
        }
    }

    #[test]
    fn positional_arguments_are_rejected() {
        assert!(matches!(
            parse_call_expression("f(1, b=2)"),
            Err(ParseError::PositionalArgument { .. })
        ));
    }

    #[test]
    fn syntax_errors_carry_a_position() {
        match parse_call_expression("f(a=1") {
            Err(ParseError::Syntax { position, .. }) => assert_eq!(position, 5),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn scientific_notation_parses_as_real() {
        let calls = parse_call_expression(
            "calculate_electric_field(charge=5, distance=1.5, permittivity=8.854e-12)",
        )
        .unwrap();
        assert_eq!(calls[0].args["charge"], Value::Int(5));
        assert_eq!(calls[0].args["distance"], Value::Real(1.5));
        assert_eq!(calls[0].args["permittivity"], Value::Real(8.854e-12));
    }

    #[test]
    fn structured_json_form_is_accepted() {
        let calls = parse_call_expression(
            r#"[{"name": "get_product", "arguments": {"product_id": 101112}}]"#,
        )
        .unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].name, "get_product");
        assert_eq!(calls[0].args["product_id"], Value::Int(101112));
    }

    #[test]
    fn nested_literals_parse() {
        let calls =
            parse_call_expression("f(m={'k': [1, 2.5, true], 'n': {'deep': 'x'}})").unwrap();
        match &calls[0].args["m"] {
            Value::Map(entries) => {
                assert_eq!(
                    entries["k"],
                    Value::List(vec![Value::Int(1), Value::Real(2.5), Value::Bool(true)])
                );
            }
            other => panic!("expected map, got {other:?}"),
        }
    }

    #[test]
    fn extraction_pulls_calls_out_of_prose() {
        let text = "I will look that up.\nwhois(domain='yahoo.com')\nThat should do it.";
        let calls = extract_call_expressions(text);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].name, "whois");
    }

    #[test]
    fn extraction_finds_fenced_structured_arrays() {
        let text = "Here you go:\n```json\n[{\"name\": \"f\", \"arguments\": {\"a\": 1}}]\n```";
        let calls = extract_call_expressions(text);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].args["a"], Value::Int(1));
    }

    #[test]
    fn extraction_of_pure_prose_is_empty() {
        assert!(extract_call_expressions("No tool is needed for this request.").is_empty());
    }

    #[test]
    fn round_trip_through_structured_form() {
        let calls = parse_call_expression("f(a=1, b=[2, 3], c='x')").unwrap();
        let rendered = super::super::calls_to_structured_json(&calls).to_string();
        let back = parse_call_expression(&rendered).unwrap();
        assert_eq!(back, calls);
    }
}
