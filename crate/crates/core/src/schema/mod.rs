//! Relational EHR schema: table definitions, FK-safe ordering, DDL emission
//! and physiologic range checks.
//!
//! The schema is plain data. It can be built in code ([`build_default_schema`])
//! or read from a TOML file with one `[[tables]]` entry per table, so users
//! can adjust columns and ranges without recompiling:
//!
//! ```toml
//! [[tables]]
//! name = "vital_signs"
//! primary_key = "vital_id"
//!
//! [[tables.columns]]
//! name = "diastolic_bp"
//! kind = "decimal"
//! range = { soft_min = 40.0, soft_max = 120.0, hard_min = 20.0, hard_max = 150.0, unit = "mmHg" }
//!
//! [[tables.foreign_keys]]
//! column = "visit_id"
//! table = "hospital_visits"
//! target_column = "visit_id"
//! ```

mod default;
mod ddl;

pub use ddl::emit_ddl;
pub(crate) use ddl::quote_literal;
pub use default::{
    build_default_schema, BLOOD_GROUPS, ETHNICITIES, GENDERS, REFERENCE_TABLES, SEVERITY_CLASSES,
};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::value::{Record, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Integer,
    Decimal,
    Text,
    Date,
    Timestamp,
    Boolean,
    Enum(Vec<String>),
}

impl ColumnKind {
    pub fn label(&self) -> &'static str {
        match self {
            ColumnKind::Integer => "integer",
            ColumnKind::Decimal => "decimal",
            ColumnKind::Text => "text",
            ColumnKind::Date => "date",
            ColumnKind::Timestamp => "timestamp",
            ColumnKind::Boolean => "boolean",
            ColumnKind::Enum(_) => "enum",
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, ColumnKind::Integer | ColumnKind::Decimal)
    }

    pub fn enum_values(values: &[&str]) -> ColumnKind {
        ColumnKind::Enum(values.iter().map(|v| v.to_string()).collect())
    }
}

/// Plausible (soft) and physiologically possible (hard) bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysiologicRange {
    pub soft_min: f64,
    pub soft_max: f64,
    pub hard_min: f64,
    pub hard_max: f64,
}

impl PhysiologicRange {
    pub const fn new(hard_min: f64, soft_min: f64, soft_max: f64, hard_max: f64) -> Self {
        Self {
            soft_min,
            soft_max,
            hard_min,
            hard_max,
        }
    }

    pub fn is_ordered(&self) -> bool {
        self.hard_min <= self.soft_min
            && self.soft_min <= self.soft_max
            && self.soft_max <= self.hard_max
    }

    pub fn within_hard(&self, v: f64) -> bool {
        self.hard_min <= v && v <= self.hard_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub nullable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<PhysiologicRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl ColumnDef {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            nullable: false,
            range: None,
            unit: None,
        }
    }

    pub fn nullable(mut self) -> Self {
        self.nullable = true;
        self
    }

    pub fn ranged(mut self, range: PhysiologicRange, unit: &str) -> Self {
        self.range = Some(range);
        self.unit = Some(unit.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub table: String,
    pub target_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub primary_key: String,
    pub columns: Vec<ColumnDef>,
    #[serde(default)]
    pub foreign_keys: Vec<ForeignKey>,
}

impl TableDef {
    pub fn new(name: &str, primary_key: &str) -> Self {
        Self {
            name: name.to_string(),
            primary_key: primary_key.to_string(),
            columns: Vec::new(),
            foreign_keys: Vec::new(),
        }
    }

    pub fn col(mut self, column: ColumnDef) -> Self {
        self.columns.push(column);
        self
    }

    /// Adds an FK column of integer kind referencing `table.target_column`.
    pub fn fk(mut self, column: &str, table: &str, target_column: &str, nullable: bool) -> Self {
        let mut def = ColumnDef::new(column, ColumnKind::Integer);
        def.nullable = nullable;
        self.columns.push(def);
        self.foreign_keys.push(ForeignKey {
            column: column.to_string(),
            table: table.to_string(),
            target_column: target_column.to_string(),
        });
        self
    }

    pub fn column(&self, name: &str) -> Option<&ColumnDef> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn references(&self, table: &str) -> bool {
        self.foreign_keys.iter().any(|fk| fk.table == table)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SchemaDef {
    pub tables: Vec<TableDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("foreign-key cycle among tables: {}", tables.join(", "))]
pub struct CycleError {
    pub tables: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("empty identifier in table '{0}'")]
    EmptyIdentifier(String),
    #[error("duplicate table '{0}'")]
    DuplicateTable(String),
    #[error("duplicate column '{column}' in table '{table}'")]
    DuplicateColumn { table: String, column: String },
    #[error("primary key '{column}' is not a column of '{table}'")]
    UnknownPrimaryKey { table: String, column: String },
    #[error("foreign key column '{column}' is not a column of '{table}'")]
    UnknownFkColumn { table: String, column: String },
    #[error("foreign key {table}.{column} targets missing {target}")]
    UnknownFkTarget {
        table: String,
        column: String,
        target: String,
    },
    #[error("enum column {table}.{column} has no values")]
    EmptyEnum { table: String, column: String },
    #[error("range on {table}.{column} violates hard_min <= soft_min <= soft_max <= hard_max")]
    DisorderedRange { table: String, column: String },
    #[error(transparent)]
    Cycle(#[from] CycleError),
    #[error("row does not match table '{table}': {detail}")]
    SchemaMismatch { table: String, detail: String },
    #[error("unknown table '{0}'")]
    UnknownTable(String),
    #[error("schema file {path}: {detail}")]
    File { path: String, detail: String },
}

impl SchemaDef {
    pub fn table(&self, name: &str) -> Option<&TableDef> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut TableDef> {
        self.tables.iter_mut().find(|t| t.name == name)
    }

    pub fn table_names(&self) -> impl Iterator<Item = &str> {
        self.tables.iter().map(|t| t.name.as_str())
    }

    /// Checks every structural invariant, including FK acyclicity.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut names = HashSet::new();
        for table in &self.tables {
            if table.name.is_empty() {
                return Err(SchemaError::EmptyIdentifier("<unnamed>".into()));
            }
            if !names.insert(table.name.as_str()) {
                return Err(SchemaError::DuplicateTable(table.name.clone()));
            }
            let mut cols = HashSet::new();
            for column in &table.columns {
                if column.name.is_empty() {
                    return Err(SchemaError::EmptyIdentifier(table.name.clone()));
                }
                if !cols.insert(column.name.as_str()) {
                    return Err(SchemaError::DuplicateColumn {
                        table: table.name.clone(),
                        column: column.name.clone(),
                    });
                }
                if matches!(&column.kind, ColumnKind::Enum(v) if v.is_empty()) {
                    return Err(SchemaError::EmptyEnum {
                        table: table.name.clone(),
                        column: column.name.clone(),
                    });
                }
                if column.range.is_some_and(|r| !r.is_ordered()) {
                    return Err(SchemaError::DisorderedRange {
                        table: table.name.clone(),
                        column: column.name.clone(),
                    });
                }
            }
            if !cols.contains(table.primary_key.as_str()) {
                return Err(SchemaError::UnknownPrimaryKey {
                    table: table.name.clone(),
                    column: table.primary_key.clone(),
                });
            }
            for fk in &table.foreign_keys {
                if !cols.contains(fk.column.as_str()) {
                    return Err(SchemaError::UnknownFkColumn {
                        table: table.name.clone(),
                        column: fk.column.clone(),
                    });
                }
            }
        }
        for table in &self.tables {
            for fk in &table.foreign_keys {
                let ok = self
                    .table(&fk.table)
                    .is_some_and(|t| t.column(&fk.target_column).is_some());
                if !ok {
                    return Err(SchemaError::UnknownFkTarget {
                        table: table.name.clone(),
                        column: fk.column.clone(),
                        target: format!("{}.{}", fk.table, fk.target_column),
                    });
                }
            }
        }
        topological_order(self)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<SchemaDef, SchemaError> {
        let schema: SchemaDef = toml::from_str(text).map_err(|e| SchemaError::File {
            path: "<string>".into(),
            detail: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("schema is always TOML-representable")
    }

    pub fn load(path: &Path) -> Result<SchemaDef, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaError::File {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            SchemaError::File { detail, .. } => SchemaError::File {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }
}

/// Orders tables so that every FK target precedes the table referencing it.
/// Ties are broken by declaration order, so the result is deterministic.
pub fn topological_order(schema: &SchemaDef) -> Result<Vec<String>, CycleError> {
    let index: HashMap<&str, usize> = schema
        .tables
        .iter()
        .enumerate()
        .map(|(i, t)| (t.name.as_str(), i))
        .collect();
    let n = schema.tables.len();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, table) in schema.tables.iter().enumerate() {
        let targets: BTreeSet<usize> = table
            .foreign_keys
            .iter()
            .filter_map(|fk| index.get(fk.table.as_str()).copied())
            .collect();
        for t in targets {
            if t == i {
                // self-reference can never be satisfied by a total order
                indegree[i] += 1;
                continue;
            }
            indegree[i] += 1;
            dependents[t].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&next) = ready.iter().next() {
        ready.remove(&next);
        order.push(schema.tables[next].name.clone());
        for &d in &dependents[next] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() < n {
        let tables = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| schema.tables[i].name.clone())
            .collect();
        return Err(CycleError { tables });
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Outside the plausible band but physiologically possible.
    Warning,
    /// Physiologically impossible.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    HardMin,
    HardMax,
    SoftMin,
    SoftMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeViolation {
    pub table: String,
    pub column: String,
    pub value: f64,
    pub bound: Bound,
    pub limit: f64,
    pub severity: Severity,
}

impl fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rel = match self.bound {
            Bound::HardMin | Bound::SoftMin => "below",
            Bound::HardMax | Bound::SoftMax => "above",
        };
        write!(
            f,
            "{}.{} = {} is {rel} {:?} {}",
            self.table, self.column, self.value, self.bound, self.limit
        )
    }
}

/// Checks every ranged numeric cell of `row` against its column's bounds.
/// A value outside the hard range yields a single `Hard` violation; a value
/// inside the hard range but outside the soft range yields a `Warning`.
pub fn check_value_ranges(table: &TableDef, row: &Record) -> Result<Vec<RangeViolation>, SchemaError> {
    let row_cols: Vec<&str> = row.columns().collect();
    let table_cols: Vec<&str> = table.column_names().collect();
    if row_cols != table_cols {
        return Err(SchemaError::SchemaMismatch {
            table: table.name.clone(),
            detail: format!("row columns {row_cols:?} differ from {table_cols:?}"),
        });
    }
    let mut out = Vec::new();
    for column in &table.columns {
        let Some(range) = column.range else { continue };
        let value = match row.get(&column.name) {
            Some(Value::Null) | None => continue,
            Some(v) => match v.as_f64() {
                Some(x) => x,
                None => {
                    return Err(SchemaError::SchemaMismatch {
                        table: table.name.clone(),
                        detail: format!("ranged column '{}' holds non-numeric {v:?}", column.name),
                    })
                }
            },
        };
        let violation = |bound, limit, severity| RangeViolation {
            table: table.name.clone(),
            column: column.name.clone(),
            value,
            bound,
            limit,
            severity,
        };
        if value < range.hard_min {
            out.push(violation(Bound::HardMin, range.hard_min, Severity::Hard));
        } else if value > range.hard_max {
            out.push(violation(Bound::HardMax, range.hard_max, Severity::Hard));
        } else if value < range.soft_min {
            out.push(violation(Bound::SoftMin, range.soft_min, Severity::Warning));
        } else if value > range.soft_max {
            out.push(violation(Bound::SoftMax, range.soft_max, Severity::Warning));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tables(a_to_b: bool, b_to_a: bool) -> SchemaDef {
        let mut a = TableDef::new("a", "id").col(ColumnDef::new("id", ColumnKind::Integer));
        let mut b = TableDef::new("b", "id").col(ColumnDef::new("id", ColumnKind::Integer));
        if a_to_b {
            a = a.fk("b_id", "b", "id", false);
        }
        if b_to_a {
            b = b.fk("a_id", "a", "id", false);
        }
        SchemaDef { tables: vec![a, b] }
    }

    #[test]
    fn single_edge_puts_target_first() {
        assert_eq!(topological_order(&two_tables(true, false)).unwrap(), ["b", "a"]);
    }

    #[test]
    fn mutual_reference_is_a_cycle() {
        let err = topological_order(&two_tables(true, true)).unwrap_err();
        assert_eq!(err.tables, ["a", "b"]);
        assert!(matches!(
            two_tables(true, true).validate(),
            Err(SchemaError::Cycle(_))
        ));
    }

    #[test]
    fn self_reference_is_a_cycle() {
        let t = TableDef::new("a", "id")
            .col(ColumnDef::new("id", ColumnKind::Integer))
            .fk("parent", "a", "id", true);
        let schema = SchemaDef { tables: vec![t] };
        assert!(topological_order(&schema).is_err());
    }

    #[test]
    fn validate_rejects_bad_tables() {
        let dup = TableDef::new("a", "id")
            .col(ColumnDef::new("id", ColumnKind::Integer))
            .col(ColumnDef::new("id", ColumnKind::Text));
        assert!(matches!(
            SchemaDef { tables: vec![dup] }.validate(),
            Err(SchemaError::DuplicateColumn { .. })
        ));

        let no_pk = TableDef::new("a", "missing").col(ColumnDef::new("id", ColumnKind::Integer));
        assert!(matches!(
            SchemaDef { tables: vec![no_pk] }.validate(),
            Err(SchemaError::UnknownPrimaryKey { .. })
        ));

        let dangling = TableDef::new("a", "id")
            .col(ColumnDef::new("id", ColumnKind::Integer))
            .fk("z_id", "z", "id", false);
        assert!(matches!(
            SchemaDef { tables: vec![dangling] }.validate(),
            Err(SchemaError::UnknownFkTarget { .. })
        ));

        let empty_enum = TableDef::new("a", "id")
            .col(ColumnDef::new("id", ColumnKind::Integer))
            .col(ColumnDef::new("e", ColumnKind::Enum(vec![])));
        assert!(matches!(
            SchemaDef { tables: vec![empty_enum] }.validate(),
            Err(SchemaError::EmptyEnum { .. })
        ));

        let bad_range = TableDef::new("a", "id")
            .col(ColumnDef::new("id", ColumnKind::Integer))
            .col(ColumnDef::new("x", ColumnKind::Decimal).ranged(PhysiologicRange::new(5.0, 1.0, 2.0, 3.0), "u"));
        assert!(matches!(
            SchemaDef { tables: vec![bad_range] }.validate(),
            Err(SchemaError::DisorderedRange { .. })
        ));
    }

    fn lab_table() -> TableDef {
        TableDef::new("labs", "id")
            .col(ColumnDef::new("id", ColumnKind::Integer))
            .col(ColumnDef::new("potassium", ColumnKind::Decimal).nullable().ranged(
                PhysiologicRange::new(1.0, 2.5, 6.5, 10.0),
                "mmol/L",
            ))
    }

    #[test]
    fn range_severity_levels() {
        let t = lab_table();
        let row = |k: f64| Record::new().with("id", 1).with("potassium", k);
        assert!(check_value_ranges(&t, &row(4.2)).unwrap().is_empty());
        let warn = check_value_ranges(&t, &row(7.0)).unwrap();
        assert_eq!(warn.len(), 1);
        assert_eq!(warn[0].severity, Severity::Warning);
        assert_eq!(warn[0].bound, Bound::SoftMax);
        let hard = check_value_ranges(&t, &row(15.0)).unwrap();
        assert_eq!(hard.len(), 1);
        assert_eq!(hard[0].severity, Severity::Hard);
        assert_eq!(hard[0].bound, Bound::HardMax);
        assert_eq!(hard[0].limit, 10.0);
        let null_row = Record::new().with("id", 1).with("potassium", Value::Null);
        assert!(check_value_ranges(&t, &null_row).unwrap().is_empty());
    }

    #[test]
    fn range_check_rejects_shape_mismatch() {
        let t = lab_table();
        let row = Record::new().with("id", 1);
        assert!(matches!(
            check_value_ranges(&t, &row),
            Err(SchemaError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let schema = build_default_schema();
        let text = schema.to_toml_string();
        let back = SchemaDef::from_toml_str(&text).unwrap();
        assert_eq!(back, schema);
    }
}
