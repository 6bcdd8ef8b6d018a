//! Demographic and clinical heterogeneity: Shannon index and coverage of
//! expected categories per analyzed column.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use thiserror::Error;

use crate::catalog::CONDITIONS;
use crate::schema::{ColumnKind, SchemaDef, ETHNICITIES, GENDERS};
use crate::synth::TableRows;
use crate::value::Value;

#[derive(Debug, Error)]
pub enum DiversityError {
    #[error("counts sum to zero")]
    EmptyCounts,
    #[error("expected category set is empty")]
    EmptyExpected,
    #[error("unknown diversity column {0:?}")]
    UnknownColumn(String),
    #[error("invalid age cut points {0:?}")]
    InvalidCuts(Vec<u32>),
    #[error("failed to write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to write report: {0}")]
    Csv(#[from] csv::Error),
}

/// −Σ pᵢ ln pᵢ in nats, zero counts skipped.
pub fn shannon_index(counts: &[u64]) -> Result<f64, DiversityError> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(DiversityError::EmptyCounts);
    }
    let n = total as f64;
    Ok(-counts
        .iter()
        .filter(|c| **c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// |observed ∩ expected| / |expected|.
pub fn category_coverage<S: AsRef<str>, T: AsRef<str>>(observed: &[S], expected: &[T]) -> Result<f64, DiversityError> {
    let expected: BTreeSet<&str> = expected.iter().map(AsRef::as_ref).collect();
    if expected.is_empty() {
        return Err(DiversityError::EmptyExpected);
    }
    let observed: BTreeSet<&str> = observed.iter().map(AsRef::as_ref).collect();
    Ok(observed.intersection(&expected).count() as f64 / expected.len() as f64)
}

const PATIENT_TABLE_NAME: &str = "patient_details";

pub const AGE_BUCKETS: [&str; 3] = ["pediatric", "adult", "geriatric"];

pub const DEFAULT_COLUMNS: [&str; 6] = ["age", "gender", "ethnicity", "diagnoses", "treatments", "medications"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiversityConfig {
    /// Built-in names (see [`DEFAULT_COLUMNS`]) or `table.column` of any
    /// schema column.
    pub columns: Vec<String>,
    pub coverage_floor: f64,
    /// Age cut points: below the first is pediatric, from the second on geriatric.
    pub age_cuts: Vec<u32>,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            columns: DEFAULT_COLUMNS.iter().map(|s| s.to_string()).collect(),
            coverage_floor: 0.8,
            age_cuts: vec![18, 65],
        }
    }
}

pub fn age_bucket(age: u32, cuts: &[u32]) -> &'static str {
    if age < cuts[0] {
        AGE_BUCKETS[0]
    } else if age < cuts[1] {
        AGE_BUCKETS[1]
    } else {
        AGE_BUCKETS[2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDiversity {
    pub column: String,
    pub shannon_index: f64,
    pub counts: BTreeMap<String, u64>,
    /// `None` when the column has no closed category set.
    pub coverage: Option<f64>,
    pub missing_categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub coverage_floor: f64,
    pub columns: Vec<ColumnDiversity>,
    pub underrepresented: Vec<String>,
}

struct ColumnSource {
    values: Vec<String>,
    expected: Option<Vec<String>>,
}

fn text_of(v: &Value) -> Option<String> {
    match v {
        Value::Null => None,
        Value::Text(s) => Some(s.trim().to_string()).filter(|s| !s.is_empty()),
        other => Some(other.to_string()),
    }
}

fn column_values(rows: &TableRows, table: &str, column: &str) -> Vec<String> {
    rows.get(table)
        .map(|rs| rs.iter().filter_map(|r| r.get(column).and_then(text_of)).collect())
        .unwrap_or_default()
}

fn sorted_unique<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    items.map(str::to_string).collect::<BTreeSet<_>>().into_iter().collect()
}

fn source(
    name: &str,
    rows: &TableRows,
    schema: &SchemaDef,
    reference_date: NaiveDate,
    cuts: &[u32],
) -> Result<ColumnSource, DiversityError> {
    Ok(match name {
        "age" => ColumnSource {
            values: rows
                .get(PATIENT_TABLE_NAME)
                .map(|rs| {
                    rs.iter()
                        .filter_map(|r| match r.get("date_of_birth") {
                            Some(Value::Date(d)) => reference_date.years_since(*d),
                            _ => None,
                        })
                        .map(|a| age_bucket(a, cuts).to_string())
                        .collect()
                })
                .unwrap_or_default(),
            expected: Some(AGE_BUCKETS.iter().map(|s| s.to_string()).collect()),
        },
        "gender" => ColumnSource {
            values: column_values(rows, PATIENT_TABLE_NAME, "gender"),
            expected: Some(GENDERS.iter().map(|s| s.to_string()).collect()),
        },
        "ethnicity" => ColumnSource {
            values: column_values(rows, PATIENT_TABLE_NAME, "ethnicity"),
            expected: Some(ETHNICITIES.iter().map(|s| s.to_string()).collect()),
        },
        "diagnoses" => ColumnSource {
            values: column_values(rows, "diagnoses", "description"),
            expected: Some(sorted_unique(CONDITIONS.iter().map(|c| c.name))),
        },
        "treatments" => ColumnSource {
            values: column_values(rows, "treatment_plans", "plan_description"),
            expected: Some(sorted_unique(CONDITIONS.iter().flat_map(|c| c.plans.iter().copied()))),
        },
        "medications" => ColumnSource {
            values: column_values(rows, "medications", "drug_name"),
            expected: Some(sorted_unique(CONDITIONS.iter().flat_map(|c| c.drugs.iter().copied()))),
        },
        qualified => {
            let unknown = || DiversityError::UnknownColumn(qualified.to_string());
            let (table, column) = qualified.split_once('.').ok_or_else(unknown)?;
            let def = schema.table(table).and_then(|t| t.column(column)).ok_or_else(unknown)?;
            ColumnSource {
                values: column_values(rows, table, column),
                expected: match &def.kind {
                    ColumnKind::Enum(values) => Some(values.clone()),
                    _ => None,
                },
            }
        }
    })
}

/// Analyzes each configured column of a dataset.
pub fn diversity_report(
    rows: &TableRows,
    schema: &SchemaDef,
    config: &DiversityConfig,
    reference_date: NaiveDate,
) -> Result<DiversityReport, DiversityError> {
    if config.age_cuts.len() != 2 || config.age_cuts[0] >= config.age_cuts[1] {
        return Err(DiversityError::InvalidCuts(config.age_cuts.clone()));
    }
    let mut columns = Vec::new();
    let mut underrepresented = Vec::new();
    for name in &config.columns {
        let src = source(name, rows, schema, reference_date, &config.age_cuts)?;
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for v in &src.values {
            *counts.entry(v.clone()).or_default() += 1;
        }
        let shannon = if counts.is_empty() {
            0.0
        } else {
            shannon_index(&counts.values().copied().collect::<Vec<_>>())?
        };
        let observed: Vec<&str> = counts.keys().map(String::as_str).collect();
        let (coverage, missing) = match &src.expected {
            Some(expected) => (
                Some(category_coverage(&observed, expected)?),
                expected.iter().filter(|e| !counts.contains_key(*e)).cloned().collect(),
            ),
            None => (None, Vec::new()),
        };
        if coverage.is_some_and(|c| c < config.coverage_floor) {
            underrepresented.push(name.clone());
        }
        columns.push(ColumnDiversity {
            column: name.clone(),
            shannon_index: shannon,
            counts,
            coverage,
            missing_categories: missing,
        });
    }
    Ok(DiversityReport {
        coverage_floor: config.coverage_floor,
        columns,
        underrepresented,
    })
}

impl DiversityReport {
    /// One row per column: index, category count, coverage, floor verdict.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DiversityError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["column", "shannon_index", "categories", "coverage", "underrepresented", "missing_categories"])?;
        for c in &self.columns {
            w.write_record([
                c.column.clone(),
                format!("{:.6}", c.shannon_index),
                c.counts.len().to_string(),
                c.coverage.map(|v| format!("{v:.6}")).unwrap_or_default(),
                self.underrepresented.contains(&c.column).to_string(),
                c.missing_categories.join("; "),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shannon_examples() {
        assert!((shannon_index(&[5, 5, 5, 5]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_index(&[7]).unwrap(), 0.0);
        assert!((shannon_index(&[1, 3]).unwrap() - 0.562335).abs() < 1e-6);
        assert!(matches!(shannon_index(&[0, 0]), Err(DiversityError::EmptyCounts)));
        assert!(matches!(shannon_index(&[]), Err(DiversityError::EmptyCounts)));
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(category_coverage(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(category_coverage(&["x"], &["a", "b"]).unwrap(), 0.0);
        assert_eq!(category_coverage(&["female", "male", "nonbinary"], &GENDERS).unwrap(), 0.75);
        assert!(matches!(category_coverage::<&str, &str>(&["a"], &[]), Err(DiversityError::EmptyExpected)));
    }

    #[test]
    fn age_buckets() {
        let cuts = [18, 65];
        assert_eq!(age_bucket(17, &cuts), "pediatric");
        assert_eq!(age_bucket(18, &cuts), "adult");
        assert_eq!(age_bucket(64, &cuts), "adult");
        assert_eq!(age_bucket(65, &cuts), "geriatric");
    }

    fn small_cohort() -> (SchemaDef, TableRows) {
        use crate::schema::build_default_schema;
        use crate::synth::{generate_cohort, GenerationConfig, Generator, GrammarBackend, TemplateSet};
        let schema = build_default_schema();
        let templates = TemplateSet::builtin();
        let backend = GrammarBackend::clean();
        let config = GenerationConfig::default();
        let gen = Generator::new(&schema, &templates, &backend, &config);
        let rows = generate_cohort(&gen, 40, 7, 1).unwrap().merged(&schema);
        (schema, rows)
    }

    fn reference() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
    }

    #[test]
    fn report_covers_default_columns() {
        let (schema, rows) = small_cohort();
        let report = diversity_report(&rows, &schema, &DiversityConfig::default(), reference()).unwrap();
        assert_eq!(report.columns.len(), 6);
        let patients = rows["patient_details"].len() as u64;
        for c in &report.columns {
            let k = c.counts.len() as f64;
            assert!(c.shannon_index <= k.ln() + 1e-12, "{}", c.column);
            assert!(c.coverage.is_some());
        }
        assert_eq!(report.columns[0].counts.values().sum::<u64>(), patients);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }

    #[test]
    fn missing_category_is_underrepresented_at_full_floor() {
        let (schema, mut rows) = small_cohort();
        for r in rows.get_mut("patient_details").unwrap() {
            if r.get("ethnicity") == Some(&Value::Text(ETHNICITIES[0].into())) {
                r.set("ethnicity", Value::Text(ETHNICITIES[1].into()));
            }
        }
        let config = DiversityConfig {
            columns: vec!["ethnicity".into(), "gender".into()],
            coverage_floor: 1.0,
            ..DiversityConfig::default()
        };
        let report = diversity_report(&rows, &schema, &config, reference()).unwrap();
        assert!(report.underrepresented.contains(&"ethnicity".to_string()));
        assert_eq!(report.columns[0].missing_categories, vec![ETHNICITIES[0].to_string()]);
    }

    #[test]
    fn qualified_and_unknown_columns() {
        let (schema, rows) = small_cohort();
        let config = DiversityConfig {
            columns: vec!["vital_signs.severity_classification".into()],
            ..DiversityConfig::default()
        };
        let report = diversity_report(&rows, &schema, &config, reference()).unwrap();
        assert!(report.columns[0].coverage.is_some());
        for bad in ["zodiac", "vital_signs.nope", "nope.x"] {
            let config = DiversityConfig {
                columns: vec![bad.into()],
                ..DiversityConfig::default()
            };
            assert!(matches!(
                diversity_report(&rows, &schema, &config, reference()),
                Err(DiversityError::UnknownColumn(c)) if c == bad
            ));
        }
    }

    proptest! {
        #[test]
        fn bounded_by_ln_k(counts in prop::collection::vec(1u64..50, 1..12), scale in 1u64..20) {
            let h = shannon_index(&counts).unwrap();
            let k = counts.len() as f64;
            prop_assert!(h >= 0.0 && h <= k.ln() + 1e-12);
            let scaled: Vec<u64> = counts.iter().map(|c| c * scale).collect();
            prop_assert!((shannon_index(&scaled).unwrap() - h).abs() < 1e-12);
            let mut rev = counts.clone();
            rev.reverse();
            prop_assert!((shannon_index(&rev).unwrap() - h).abs() < 1e-12);
        }

        #[test]
        fn coverage_grows_with_rows(rows in prop::collection::vec(0usize..6, 0..20), extra in 0usize..6) {
            let expected = ["a", "b", "c", "d"];
            let names = ["a", "b", "c", "d", "x", "y"];
            let obs: Vec<&str> = rows.iter().map(|i| names[*i]).collect();
            let before = category_coverage(&obs, &expected).unwrap();
            let mut more = obs.clone();
            more.push(names[extra]);
            prop_assert!(category_coverage(&more, &expected).unwrap() >= before);
        }
    }
}
