//! Relational output: batched INSERT emission in FK-safe order, an in-memory
//! referential-integrity check, and transactional loading into PostgreSQL.
//!
//! Connection strings come from the `EHRSYNTH_DATABASE_URL` environment
//! variable or from `[load] database_url`. A URL in the config file must not
//! carry a password; supply it through `PGPASSWORD` or the environment URL.

use indexmap::IndexMap;
use postgres::{Client, NoTls};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

use crate::schema::{emit_ddl, quote_literal, topological_order, ColumnKind, CycleError, SchemaDef, TableDef};
use crate::synth::TableRows;
use crate::value::{Record, Value, DATE_FORMAT, TIMESTAMP_FORMAT};

pub const DATABASE_URL_ENV: &str = "EHRSYNTH_DATABASE_URL";
pub const PASSWORD_ENV: &str = "PGPASSWORD";
pub const DEFAULT_BATCH_SIZE: usize = 500;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("row does not fit table '{table}': {detail}")]
    SchemaMismatch { table: String, detail: String },
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("invalid load config: {0}")]
    Config(String),
    #[error("database connection failed: {0}")]
    Connection(String),
    #[error("constraint violation: {message}\n  in statement: {statement}")]
    ConstraintViolation { statement: String, message: String },
    #[error("database error: {message}\n  in statement: {statement}")]
    Database { statement: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadConfig {
    /// `postgres://user@host:port/db`, without a password.
    pub database_url: Option<String>,
    pub batch_size: usize,
    /// Apply the schema DDL inside the load transaction first.
    pub create_schema: bool,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            database_url: None,
            batch_size: DEFAULT_BATCH_SIZE,
            create_schema: false,
        }
    }
}

/// SQL literal for one cell, checked against the column kind.
pub fn sql_literal(value: &Value, kind: &ColumnKind) -> Result<String, String> {
    Ok(match (kind, value) {
        (_, Value::Null) => "NULL".to_string(),
        (ColumnKind::Integer, Value::Integer(v)) => v.to_string(),
        (ColumnKind::Decimal, Value::Integer(v)) => v.to_string(),
        (ColumnKind::Decimal, Value::Decimal(v)) if v.is_finite() => {
            // Display is the shortest string that parses back to the same f64
            v.to_string()
        }
        (ColumnKind::Text, Value::Text(s)) => quote_literal(s),
        (ColumnKind::Enum(allowed), Value::Text(s)) => {
            if !allowed.iter().any(|a| a == s) {
                return Err(format!("'{s}' is not one of {allowed:?}"));
            }
            quote_literal(s)
        }
        (ColumnKind::Date, Value::Date(d)) => format!("DATE '{}'", d.format(DATE_FORMAT)),
        (ColumnKind::Timestamp, Value::Timestamp(t)) => format!("TIMESTAMP '{}'", t.format(TIMESTAMP_FORMAT)),
        (ColumnKind::Boolean, Value::Boolean(b)) => if *b { "TRUE" } else { "FALSE" }.to_string(),
        (kind, value) => return Err(format!("{value:?} is not a valid {} value", kind.label())),
    })
}

/// One multi-row INSERT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertStatement {
    pub table: String,
    pub rows: usize,
    pub sql: String,
}

fn row_tuple(def: &TableDef, row: &Record) -> Result<String, LoadError> {
    let mismatch = |detail: String| LoadError::SchemaMismatch {
        table: def.name.clone(),
        detail,
    };
    if row.len() != def.columns.len() || def.columns.iter().any(|c| row.get(&c.name).is_none()) {
        let have: Vec<&str> = row.columns().collect();
        let want: Vec<&str> = def.column_names().collect();
        return Err(mismatch(format!("row columns {have:?} differ from {want:?}")));
    }
    let cells = def
        .columns
        .iter()
        .map(|c| sql_literal(row.get(&c.name).expect("checked above"), &c.kind).map_err(|e| mismatch(format!("{}: {e}", c.name))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(format!("({})", cells.join(", ")))
}

fn table_statements(def: &TableDef, rows: &[Record], batch_size: usize) -> Result<Vec<InsertStatement>, LoadError> {
    let columns: Vec<&str> = def.column_names().collect();
    let head = format!("INSERT INTO {} ({}) VALUES\n", def.name, columns.join(", "));
    rows.chunks(batch_size.max(1))
        .map(|chunk| {
            let tuples = chunk.iter().map(|r| row_tuple(def, r)).collect::<Result<Vec<_>, _>>()?;
            let mut sql = head.clone();
            for (i, t) in tuples.iter().enumerate() {
                let _ = write!(sql, "  {t}{}", if i + 1 == tuples.len() { ";\n" } else { ",\n" });
            }
            Ok(InsertStatement {
                table: def.name.clone(),
                rows: chunk.len(),
                sql,
            })
        })
        .collect()
}

/// INSERT statements grouped per table in FK-safe order, each carrying at
/// most `batch_size` rows. Tables are rendered in parallel.
pub fn insert_statements(rows: &TableRows, schema: &SchemaDef, batch_size: usize) -> Result<Vec<InsertStatement>, LoadError> {
    if let Some(unknown) = rows.keys().find(|t| schema.table(t).is_none()) {
        return Err(LoadError::SchemaMismatch {
            table: unknown.clone(),
            detail: "table is not in the schema".into(),
        });
    }
    let order = topological_order(schema)?;
    let per_table = order
        .par_iter()
        .map(|name| match rows.get(name) {
            Some(rs) if !rs.is_empty() => table_statements(schema.table(name).expect("ordered table exists"), rs, batch_size),
            _ => Ok(Vec::new()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_table.into_iter().flatten().collect())
}

/// The statements of [`insert_statements`] as one SQL text; empty input
/// gives empty text.
pub fn emit_inserts(rows: &TableRows, schema: &SchemaDef, batch_size: usize) -> Result<String, LoadError> {
    Ok(insert_statements(rows, schema, batch_size)?
        .into_iter()
        .map(|s| s.sql)
        .collect::<Vec<_>>()
        .join("\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub table: String,
    pub column: String,
    pub value: String,
    pub target_table: String,
    pub target_column: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}.{} = {} has no match in {}.{}",
            self.table, self.column, self.value, self.target_table, self.target_column
        )
    }
}

/// One violation per non-null FK value without a matching target row.
pub fn verify_referential_integrity(rows: &TableRows, schema: &SchemaDef) -> Vec<Violation> {
    let mut targets: HashMap<(&str, &str), HashSet<String>> = HashMap::new();
    for table in &schema.tables {
        for fk in &table.foreign_keys {
            targets.entry((fk.table.as_str(), fk.target_column.as_str())).or_insert_with(|| {
                rows.get(&fk.table)
                    .into_iter()
                    .flatten()
                    .filter_map(|r| r.get(&fk.target_column).filter(|v| !v.is_null()).map(|v| v.to_string()))
                    .collect()
            });
        }
    }
    let mut out = Vec::new();
    for (name, table_rows) in rows {
        let Some(def) = schema.table(name) else { continue };
        for row in table_rows {
            for fk in &def.foreign_keys {
                let Some(v) = row.get(&fk.column).filter(|v| !v.is_null()) else { continue };
                let key = v.to_string();
                if !targets[&(fk.table.as_str(), fk.target_column.as_str())].contains(&key) {
                    out.push(Violation {
                        table: name.clone(),
                        column: fk.column.clone(),
                        value: key,
                        target_table: fk.table.clone(),
                        target_column: fk.target_column.clone(),
                    });
                }
            }
        }
    }
    out
}

/// The environment URL if set, else the config URL (which must not embed
/// a password). `PGPASSWORD` fills in a missing password.
pub fn connection_config(config: &LoadConfig) -> Result<postgres::Config, LoadError> {
    let from_env = std::env::var(DATABASE_URL_ENV).ok().filter(|s| !s.is_empty());
    let url = match (&from_env, &config.database_url) {
        (Some(url), _) => url.clone(),
        (None, Some(url)) => url.clone(),
        (None, None) => {
            return Err(LoadError::Config(format!(
                "no database URL: set {DATABASE_URL_ENV} or [load] database_url"
            )))
        }
    };
    let mut pg: postgres::Config = url.parse().map_err(|e| LoadError::Config(format!("invalid database URL: {e}")))?;
    if from_env.is_none() && pg.get_password().is_some() {
        return Err(LoadError::Config(format!(
            "database_url in the config file must not contain a password; use {PASSWORD_ENV} or {DATABASE_URL_ENV}"
        )));
    }
    if pg.get_password().is_none() {
        if let Ok(pw) = std::env::var(PASSWORD_ENV) {
            pg.password(pw);
        }
    }
    Ok(pg)
}

pub fn connect(config: &LoadConfig) -> Result<Client, LoadError> {
    connection_config(config)?
        .connect(NoTls)
        .map_err(|e| LoadError::Connection(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LoadSummary {
    pub rows_per_table: IndexMap<String, u64>,
    pub committed_rows: u64,
}

fn preview(sql: &str) -> String {
    const MAX: usize = 300;
    if sql.len() <= MAX {
        return sql.trim_end().to_string();
    }
    let cut = (0..=MAX).rev().find(|i| sql.is_char_boundary(*i)).unwrap_or(0);
    format!("{} ...", &sql[..cut])
}

fn classify(e: postgres::Error, sql: &str) -> LoadError {
    let message = e.as_db_error().map(|d| d.to_string()).unwrap_or_else(|| e.to_string());
    let statement = preview(sql);
    match e.code() {
        Some(code) if code.code().starts_with("23") => LoadError::ConstraintViolation { statement, message },
        _ => LoadError::Database { statement, message },
    }
}

/// Creates every table in one transaction.
pub fn create_schema(client: &mut Client, schema: &SchemaDef) -> Result<(), LoadError> {
    let ddl = emit_ddl(schema)?;
    let mut tx = client.transaction().map_err(|e| classify(e, "BEGIN"))?;
    tx.batch_execute(&ddl).map_err(|e| classify(e, &ddl))?;
    tx.commit().map_err(|e| classify(e, "COMMIT"))
}

/// Inserts every row inside a single transaction. Any failure rolls the
/// whole load back, so nothing is committed.
pub fn load_database(
    client: &mut Client,
    rows: &TableRows,
    schema: &SchemaDef,
    config: &LoadConfig,
) -> Result<LoadSummary, LoadError> {
    let statements = insert_statements(rows, schema, config.batch_size)?;
    let mut tx = client.transaction().map_err(|e| classify(e, "BEGIN"))?;
    if config.create_schema {
        let ddl = emit_ddl(schema)?;
        tx.batch_execute(&ddl).map_err(|e| classify(e, &ddl))?;
    }
    let mut summary = LoadSummary::default();
    for s in &statements {
        // dropping `tx` on the error path rolls back
        let n = tx.execute(s.sql.as_str(), &[]).map_err(|e| classify(e, &s.sql))?;
        *summary.rows_per_table.entry(s.table.clone()).or_insert(0) += n;
    }
    tx.commit().map_err(|e| classify(e, "COMMIT"))?;
    summary.committed_rows = summary.rows_per_table.values().sum();
    Ok(summary)
}

/// Runs an emitted SQL file in one transaction; the summary counts the rows
/// present in each schema table afterwards.
pub fn load_sql(client: &mut Client, sql: &str, schema: &SchemaDef) -> Result<LoadSummary, LoadError> {
    let mut tx = client.transaction().map_err(|e| classify(e, "BEGIN"))?;
    tx.batch_execute(sql).map_err(|e| classify(e, sql))?;
    tx.commit().map_err(|e| classify(e, "COMMIT"))?;
    let mut summary = LoadSummary::default();
    for table in topological_order(schema)? {
        let q = format!("SELECT count(*) FROM {table}");
        let n: i64 = client.query_one(q.as_str(), &[]).map_err(|e| classify(e, &q))?.get(0);
        summary.rows_per_table.insert(table, n as u64);
    }
    summary.committed_rows = summary.rows_per_table.values().sum();
    Ok(summary)
}

/// Reads a table back, ordered by primary key, typed by the schema.
pub fn read_table(client: &mut Client, def: &TableDef) -> Result<Vec<Record>, LoadError> {
    let columns: Vec<&str> = def.column_names().collect();
    let q = format!("SELECT {} FROM {} ORDER BY {}", columns.join(", "), def.name, def.primary_key);
    let rows = client.query(q.as_str(), &[]).map_err(|e| classify(e, &q))?;
    rows.iter()
        .map(|row| {
            def.columns
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let v = match c.kind {
                        ColumnKind::Integer => row.try_get::<_, Option<i64>>(i).map(|v| v.map(Value::Integer)),
                        ColumnKind::Decimal => row.try_get::<_, Option<f64>>(i).map(|v| v.map(Value::Decimal)),
                        ColumnKind::Text | ColumnKind::Enum(_) => row.try_get::<_, Option<String>>(i).map(|v| v.map(Value::Text)),
                        ColumnKind::Date => row.try_get::<_, Option<chrono::NaiveDate>>(i).map(|v| v.map(Value::Date)),
                        ColumnKind::Timestamp => row.try_get::<_, Option<chrono::NaiveDateTime>>(i).map(|v| v.map(Value::Timestamp)),
                        ColumnKind::Boolean => row.try_get::<_, Option<bool>>(i).map(|v| v.map(Value::Boolean)),
                    };
                    v.map(|v| (c.name.clone(), v.unwrap_or(Value::Null))).map_err(|e| classify(e, &q))
                })
                .collect::<Result<Record, _>>()
        })
        .collect()
}
