use std::fmt::Write;

use super::{topological_order, ColumnDef, ColumnKind, CycleError, SchemaDef, TableDef};

pub(crate) const TEXT_TYPE: &str = "VARCHAR(4000)";
const ENUM_TYPE: &str = "VARCHAR(64)";

fn sql_type(kind: &ColumnKind) -> &'static str {
    match kind {
        ColumnKind::Integer => "BIGINT",
        ColumnKind::Decimal => "DOUBLE PRECISION",
        ColumnKind::Text => TEXT_TYPE,
        ColumnKind::Date => "DATE",
        ColumnKind::Timestamp => "TIMESTAMP",
        ColumnKind::Boolean => "BOOLEAN",
        ColumnKind::Enum(_) => ENUM_TYPE,
    }
}

pub(crate) fn quote_literal(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn column_line(column: &ColumnDef) -> String {
    let mut line = format!("    {} {}", column.name, sql_type(&column.kind));
    if !column.nullable {
        line.push_str(" NOT NULL");
    }
    if let ColumnKind::Enum(values) = &column.kind {
        let list: Vec<String> = values.iter().map(|v| quote_literal(v)).collect();
        let _ = write!(line, " CHECK ({} IN ({}))", column.name, list.join(", "));
    }
    if let Some(r) = column.range {
        let _ = write!(
            line,
            " CHECK ({c} BETWEEN {} AND {})",
            r.hard_min,
            r.hard_max,
            c = column.name
        );
    }
    line
}

fn create_table(table: &TableDef) -> String {
    let mut lines: Vec<String> = table.columns.iter().map(column_line).collect();
    lines.push(format!("    PRIMARY KEY ({})", table.primary_key));
    for fk in &table.foreign_keys {
        lines.push(format!(
            "    FOREIGN KEY ({}) REFERENCES {} ({})",
            fk.column, fk.table, fk.target_column
        ));
    }
    format!("CREATE TABLE {} (\n{}\n);\n", table.name, lines.join(",\n"))
}

/// Emits one `CREATE TABLE` per table in FK-safe order, in portable SQL.
pub fn emit_ddl(schema: &SchemaDef) -> Result<String, CycleError> {
    let order = topological_order(schema)?;
    let statements: Vec<String> = order
        .iter()
        .filter_map(|name| schema.table(name))
        .map(create_table)
        .collect();
    Ok(statements.join("\n"))
}
