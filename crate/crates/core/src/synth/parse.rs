//! Extraction of the fenced `field: value` block from a completion.

use chrono::{NaiveDate, NaiveDateTime};
use thiserror::Error;

use crate::schema::{ColumnKind, TableDef};
use crate::value::{Record, Value, DATE_FORMAT, TIMESTAMP_FORMAT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no well-formed fenced block in completion")]
    NoBlock,
    #[error("missing required field '{0}'")]
    MissingField(String),
    #[error("field '{field}': {detail}")]
    BadValue { field: String, detail: String },
    #[error("field '{0}' is not a column of the table")]
    UnknownField(String),
}

/// Fenced blocks in order of appearance, without their fence lines.
fn fenced_blocks(text: &str) -> Vec<Vec<&str>> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => current = Some(Vec::new()),
            }
        } else if let Some(block) = current.as_mut() {
            block.push(line);
        }
    }
    blocks
}

/// A block is well-formed when every nonblank line is `key: value` with a
/// nonempty key, and it has at least one such line.
fn key_values<'a>(block: &[&'a str]) -> Option<Vec<(String, &'a str)>> {
    let mut out = Vec::new();
    for line in block {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':')?;
        let key = key.trim().trim_start_matches('-').trim().to_lowercase();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return None;
        }
        out.push((key, value.trim()));
    }
    (!out.is_empty()).then_some(out)
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\''] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            return &s[1..s.len() - 1];
        }
    }
    s
}

/// Leading numeric token of `s`, so `"172 cm"` reads as 172.
fn leading_number(s: &str) -> Option<f64> {
    let s = s.trim();
    let end = s
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || c == '.' || ((c == '-' || c == '+') && i == 0)))
        .map_or(s.len(), |(i, _)| i);
    s[..end].parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_cell(kind: &ColumnKind, raw: &str) -> Result<Value, String> {
    let raw = unquote(raw);
    if raw.is_empty() {
        return Err("empty value".into());
    }
    match kind {
        ColumnKind::Integer => {
            let v = leading_number(raw).ok_or_else(|| format!("'{raw}' is not a number"))?;
            if v.fract() != 0.0 {
                return Err(format!("'{raw}' is not an integer"));
            }
            Ok(Value::Integer(v as i64))
        }
        ColumnKind::Decimal => leading_number(raw)
            .map(Value::Decimal)
            .ok_or_else(|| format!("'{raw}' is not a number")),
        ColumnKind::Text => Ok(Value::Text(raw.to_string())),
        ColumnKind::Date => NaiveDate::parse_from_str(raw, DATE_FORMAT)
            .map(Value::Date)
            .map_err(|e| format!("'{raw}' is not a YYYY-MM-DD date: {e}")),
        ColumnKind::Timestamp => NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
            .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S"))
            .map(Value::Timestamp)
            .map_err(|e| format!("'{raw}' is not a timestamp: {e}")),
        ColumnKind::Boolean => match raw.to_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(Value::Boolean(true)),
            "false" | "no" | "0" => Ok(Value::Boolean(false)),
            _ => Err(format!("'{raw}' is not a boolean")),
        },
        ColumnKind::Enum(values) => {
            let norm = raw.to_lowercase().replace([' ', '-'], "_");
            values
                .iter()
                .find(|v| v.to_lowercase() == norm || v.as_str() == raw)
                .map(|v| Value::Text(v.clone()))
                .ok_or_else(|| format!("'{raw}' is not one of {values:?}"))
        }
    }
}

/// Parses the first well-formed fenced block into a record holding exactly
/// `fields`, typed by the table's column kinds. Extra keys are ignored.
pub fn parse_structured_output(text: &str, table: &TableDef, fields: &[String]) -> Result<Record, ParseError> {
    let pairs = fenced_blocks(text)
        .iter()
        .find_map(|b| key_values(b))
        .ok_or(ParseError::NoBlock)?;
    let mut record = Record::new();
    for field in fields {
        let column = table
            .column(field)
            .ok_or_else(|| ParseError::UnknownField(field.clone()))?;
        let raw = pairs
            .iter()
            .find(|(k, _)| k == field)
            .map(|(_, v)| *v)
            .ok_or_else(|| ParseError::MissingField(field.clone()))?;
        let value = parse_cell(&column.kind, raw).map_err(|detail| ParseError::BadValue {
            field: field.clone(),
            detail,
        })?;
        record.set(field, value);
    }
    Ok(record)
}
