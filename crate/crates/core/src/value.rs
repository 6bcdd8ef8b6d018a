//! Typed cell values and records.

use chrono::{NaiveDate, NaiveDateTime};
use indexmap::IndexMap;
use serde_json::Value as JsonValue;
use std::fmt;

use crate::schema::{ColumnKind, TableDef};

pub const DATE_FORMAT: &str = "%Y-%m-%d";
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

/// A single typed cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Integer(i64),
    Decimal(f64),
    Text(String),
    Date(NaiveDate),
    Timestamp(NaiveDateTime),
    Boolean(bool),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Integer(v) => Some(*v),
            _ => None,
        }
    }

    /// Numeric view of integer and decimal cells.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(v) => Some(*v as f64),
            Value::Decimal(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    /// JSON form used by the cohort file. Dates and timestamps become strings.
    pub fn to_json(&self) -> JsonValue {
        match self {
            Value::Null => JsonValue::Null,
            Value::Integer(v) => JsonValue::from(*v),
            Value::Decimal(v) => JsonValue::from(*v),
            Value::Text(s) => JsonValue::from(s.as_str()),
            Value::Date(d) => JsonValue::from(d.format(DATE_FORMAT).to_string()),
            Value::Timestamp(t) => JsonValue::from(t.format(TIMESTAMP_FORMAT).to_string()),
            Value::Boolean(b) => JsonValue::from(*b),
        }
    }

    /// Re-types a JSON cell according to the column kind.
    pub fn from_json(kind: &ColumnKind, json: &JsonValue) -> Result<Value, String> {
        if json.is_null() {
            return Ok(Value::Null);
        }
        let bad = || format!("expected {} but found {json}", kind.label());
        match kind {
            ColumnKind::Integer => json.as_i64().map(Value::Integer).ok_or_else(bad),
            ColumnKind::Decimal => json.as_f64().map(Value::Decimal).ok_or_else(bad),
            ColumnKind::Text => json
                .as_str()
                .map(|s| Value::Text(s.to_string()))
                .ok_or_else(bad),
            ColumnKind::Enum(values) => {
                let s = json.as_str().ok_or_else(bad)?;
                if values.iter().any(|v| v == s) {
                    Ok(Value::Text(s.to_string()))
                } else {
                    Err(format!("'{s}' is not one of {values:?}"))
                }
            }
            ColumnKind::Date => {
                let s = json.as_str().ok_or_else(bad)?;
                NaiveDate::parse_from_str(s, DATE_FORMAT)
                    .map(Value::Date)
                    .map_err(|e| format!("bad date '{s}': {e}"))
            }
            ColumnKind::Timestamp => {
                let s = json.as_str().ok_or_else(bad)?;
                NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
                    .map(Value::Timestamp)
                    .map_err(|e| format!("bad timestamp '{s}': {e}"))
            }
            ColumnKind::Boolean => json.as_bool().map(Value::Boolean).ok_or_else(bad),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(v) => write!(f, "{v}"),
            Value::Decimal(v) => write!(f, "{v}"),
            Value::Text(s) => f.write_str(s),
            Value::Date(d) => write!(f, "{}", d.format(DATE_FORMAT)),
            Value::Timestamp(t) => write!(f, "{}", t.format(TIMESTAMP_FORMAT)),
            Value::Boolean(b) => write!(f, "{b}"),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Decimal(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl From<NaiveDate> for Value {
    fn from(v: NaiveDate) -> Self {
        Value::Date(v)
    }
}

impl From<NaiveDateTime> for Value {
    fn from(v: NaiveDateTime) -> Self {
        Value::Timestamp(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

/// One row: column name to value, in the table's column order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Record(IndexMap<String, Value>);

impl Record {
    pub fn new() -> Self {
        Self(IndexMap::new())
    }

    pub fn with(mut self, column: &str, value: impl Into<Value>) -> Self {
        self.set(column, value);
        self
    }

    pub fn set(&mut self, column: &str, value: impl Into<Value>) {
        self.0.insert(column.to_string(), value.into());
    }

    pub fn get(&self, column: &str) -> Option<&Value> {
        self.0.get(column)
    }

    pub fn text(&self, column: &str) -> Option<&str> {
        self.get(column).and_then(Value::as_str)
    }

    pub fn int(&self, column: &str) -> Option<i64> {
        self.get(column).and_then(Value::as_i64)
    }

    pub fn num(&self, column: &str) -> Option<f64> {
        self.get(column).and_then(Value::as_f64)
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reorders the cells into the table's column order, filling absent
    /// nullable columns with NULL. Unknown or missing non-null columns fail.
    pub fn conform(mut self, table: &TableDef) -> Result<Record, String> {
        let mut out = IndexMap::with_capacity(table.columns.len());
        for column in &table.columns {
            match self.0.shift_remove(&column.name) {
                Some(v) => {
                    out.insert(column.name.clone(), v);
                }
                None if column.nullable => {
                    out.insert(column.name.clone(), Value::Null);
                }
                None => return Err(format!("{}: missing column '{}'", table.name, column.name)),
            }
        }
        if let Some(extra) = self.0.keys().next() {
            return Err(format!("{}: unknown column '{extra}'", table.name));
        }
        Ok(Record(out))
    }

    pub fn to_json(&self) -> JsonValue {
        JsonValue::Object(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), v.to_json()))
                .collect(),
        )
    }

    pub fn from_json(table: &TableDef, json: &JsonValue) -> Result<Record, String> {
        let obj = json
            .as_object()
            .ok_or_else(|| format!("{}: row is not an object", table.name))?;
        let mut rec = Record::new();
        for (key, cell) in obj {
            let column = table
                .column(key)
                .ok_or_else(|| format!("{}: unknown column '{key}'", table.name))?;
            let value = Value::from_json(&column.kind, cell)
                .map_err(|e| format!("{}.{key}: {e}", table.name))?;
            rec.set(key, value);
        }
        rec.conform(table)
    }
}

impl FromIterator<(String, Value)> for Record {
    fn from_iter<T: IntoIterator<Item = (String, Value)>>(iter: T) -> Self {
        Record(iter.into_iter().collect())
    }
}
