//! The validation unit: one hospital visit, flattened together with the
//! patient-level rows it is read against.
//!
//! A visit's view holds the visit row, every row that depends on it through
//! foreign keys (vitals, labs, diagnoses, their plans and medications,
//! admissions and discharge summaries, ...), the rows the visit itself
//! references inside the bundle (its appointment), and the patient-level
//! tables (patient details, allergies, medical history, ...).

use indexmap::{IndexMap, IndexSet};
use std::collections::{BTreeMap, BTreeSet};

use crate::schema::{topological_order, SchemaDef, REFERENCE_TABLES};
use crate::synth::{Cohort, PatientBundle, TableRows};
use crate::value::{Record, Value};

pub const VISIT_TABLE: &str = "hospital_visits";
pub const PATIENT_TABLE: &str = "patient_details";

#[derive(Debug, Clone, PartialEq)]
pub struct VisitRecord {
    pub patient_id: i64,
    pub visit_id: i64,
    pub rows: TableRows,
}

impl VisitRecord {
    /// Record id used in reports.
    pub fn id(&self) -> i64 {
        self.visit_id
    }

    pub fn table(&self, table: &str) -> &[Record] {
        self.rows.get(table).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn first(&self, table: &str) -> Option<&Record> {
        self.table(table).first()
    }

    /// Value of `column` in the first row of `table`; NULL reads as absent.
    pub fn value(&self, table: &str, column: &str) -> Option<&Value> {
        self.first(table)?.get(column).filter(|v| !v.is_null())
    }

    /// Nonblank text of `column` in the first row of `table`.
    pub fn text(&self, table: &str, column: &str) -> Option<&str> {
        self.first(table)?.text(column).map(str::trim).filter(|s| !s.is_empty())
    }

    /// Nonblank texts of `column` across all rows of `table`.
    pub fn texts(&self, table: &str, column: &str) -> Vec<&str> {
        self.table(table)
            .iter()
            .filter_map(|r| r.text(column).map(str::trim).filter(|s| !s.is_empty()))
            .collect()
    }

    /// Looks up a `table.column` feature name.
    pub fn feature(&self, qualified: &str) -> Option<&Value> {
        let (table, column) = qualified.split_once('.')?;
        self.value(table, column)
    }
}

fn pk_value(schema: &SchemaDef, table: &str, row: &Record) -> Option<i64> {
    let pk = &schema.table(table)?.primary_key;
    row.int(pk)
}

/// Splits one bundle into per-visit views, in visit order.
pub fn visit_records(schema: &SchemaDef, bundle: &PatientBundle) -> Vec<VisitRecord> {
    let order = topological_order(schema).unwrap_or_else(|_| schema.table_names().map(String::from).collect());
    let in_bundle = |t: &str| !REFERENCE_TABLES.contains(&t);
    let visit_def = match schema.table(VISIT_TABLE) {
        Some(t) => t,
        None => return Vec::new(),
    };
    // tables the visit row points at (other than the patient)
    let visit_parents: Vec<(&str, &str)> = visit_def
        .foreign_keys
        .iter()
        .filter(|fk| in_bundle(&fk.table) && fk.table != PATIENT_TABLE)
        .map(|fk| (fk.column.as_str(), fk.table.as_str()))
        .collect();
    // patient-level tables: every in-bundle FK targets the patient table
    let patient_level: IndexSet<&str> = order
        .iter()
        .map(String::as_str)
        .filter(|t| *t != VISIT_TABLE && in_bundle(t))
        .filter(|t| !visit_parents.iter().any(|(_, p)| p == t))
        .filter(|t| {
            schema.table(t).is_some_and(|def| {
                def.foreign_keys
                    .iter()
                    .filter(|fk| in_bundle(&fk.table))
                    .all(|fk| fk.table == PATIENT_TABLE)
            })
        })
        .collect();

    bundle
        .table(VISIT_TABLE)
        .iter()
        .filter_map(|visit| {
            let visit_id = visit.int(&visit_def.primary_key)?;
            let mut rows: TableRows = IndexMap::new();
            let mut keys: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
            keys.entry(VISIT_TABLE).or_default().insert(visit_id);
            for (column, parent) in &visit_parents {
                if let Some(id) = visit.int(column) {
                    keys.entry(parent).or_default().insert(id);
                }
            }
            for table in order.iter().map(String::as_str).filter(|t| in_bundle(t)) {
                let Some(def) = schema.table(table) else { continue };
                let selected: Vec<Record> = if table == VISIT_TABLE {
                    vec![visit.clone()]
                } else if patient_level.contains(table) {
                    bundle.table(table).to_vec()
                } else if let Some(ids) = keys.get(table).filter(|_| visit_parents.iter().any(|(_, p)| *p == table)) {
                    bundle
                        .table(table)
                        .iter()
                        .filter(|r| pk_value(schema, table, r).is_some_and(|k| ids.contains(&k)))
                        .cloned()
                        .collect()
                } else {
                    bundle
                        .table(table)
                        .iter()
                        .filter(|r| {
                            def.foreign_keys.iter().any(|fk| {
                                fk.table != PATIENT_TABLE
                                    && !visit_parents.iter().any(|(_, p)| *p == fk.table)
                                    && r.int(&fk.column)
                                        .is_some_and(|v| keys.get(fk.table.as_str()).is_some_and(|s| s.contains(&v)))
                            })
                        })
                        .cloned()
                        .collect()
                };
                if !patient_level.contains(table) && table != VISIT_TABLE {
                    let set = keys.entry(table).or_default();
                    for r in &selected {
                        if let Some(k) = pk_value(schema, table, r) {
                            set.insert(k);
                        }
                    }
                }
                rows.insert(table.to_string(), selected);
            }
            Some(VisitRecord {
                patient_id: bundle.patient_id,
                visit_id,
                rows,
            })
        })
        .collect()
}

/// Per-visit views for a whole cohort, patients in order.
pub fn cohort_records(schema: &SchemaDef, cohort: &Cohort) -> Vec<VisitRecord> {
    cohort
        .patients
        .iter()
        .flat_map(|p| visit_records(schema, p))
        .collect()
}

/// Removes the given visits and every row that depends on them, directly or
/// transitively, from a bundle. Returns the number of rows removed.
pub fn remove_visits(schema: &SchemaDef, bundle: &mut PatientBundle, visit_ids: &BTreeSet<i64>) -> usize {
    if visit_ids.is_empty() {
        return 0;
    }
    let order = topological_order(schema).unwrap_or_else(|_| schema.table_names().map(String::from).collect());
    let mut removed_keys: BTreeMap<String, BTreeSet<i64>> = BTreeMap::new();
    removed_keys.insert(VISIT_TABLE.to_string(), visit_ids.clone());
    let mut removed = 0;
    // old row index -> new row index, per table, for provenance
    let mut remap: BTreeMap<String, Vec<Option<usize>>> = BTreeMap::new();
    for table in &order {
        let Some(def) = schema.table(table) else { continue };
        let Some(rows) = bundle.rows.get_mut(table) else { continue };
        let mut dropped = BTreeSet::new();
        let mut kept = Vec::with_capacity(rows.len());
        let mut next = 0;
        for r in rows.iter() {
            let doomed = (table == VISIT_TABLE && r.int(&def.primary_key).is_some_and(|k| visit_ids.contains(&k)))
                || def.foreign_keys.iter().any(|fk| {
                    r.int(&fk.column)
                        .is_some_and(|v| removed_keys.get(&fk.table).is_some_and(|s| s.contains(&v)))
                });
            if doomed {
                if let Some(k) = r.int(&def.primary_key) {
                    dropped.insert(k);
                }
                kept.push(None);
            } else {
                kept.push(Some(next));
                next += 1;
            }
        }
        let mut flags = kept.iter();
        rows.retain(|_| flags.next().is_some_and(Option::is_some));
        removed += kept.iter().filter(|k| k.is_none()).count();
        remap.insert(table.clone(), kept);
        if !dropped.is_empty() {
            removed_keys.entry(table.clone()).or_default().extend(dropped);
        }
    }
    bundle.provenance.retain_mut(|p| {
        match remap.get(&p.table).and_then(|m| m.get(p.row).copied()) {
            Some(Some(new_row)) => {
                p.row = new_row;
                true
            }
            Some(None) => false,
            None => true,
        }
    });
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::build_default_schema;
    use crate::synth::{generate_cohort, GenerationConfig, Generator, GrammarBackend, TemplateSet};

    fn cohort(n: usize) -> (SchemaDef, Cohort) {
        let schema = build_default_schema();
        let templates = TemplateSet::builtin();
        let backend = GrammarBackend::clean();
        let config = GenerationConfig::default();
        let gen = Generator::new(&schema, &templates, &backend, &config);
        let c = generate_cohort(&gen, n, 3, 1).unwrap();
        (schema, c)
    }

    #[test]
    fn one_view_per_visit_with_its_children() {
        let (schema, c) = cohort(2);
        let p = &c.patients[0];
        let views = visit_records(&schema, p);
        assert_eq!(views.len(), p.table(VISIT_TABLE).len());
        for v in &views {
            assert_eq!(v.table(VISIT_TABLE).len(), 1);
            assert_eq!(v.table("vital_signs").len(), 1);
            assert_eq!(v.table("diagnoses").len(), 1);
            assert_eq!(v.table("treatment_plans").len(), 1);
            assert!(!v.table("medications").is_empty());
            let plan = v.first("treatment_plans").unwrap().int("plan_id");
            assert!(v.table("medications").iter().all(|m| m.int("plan_id") == plan));
            assert_eq!(v.table(PATIENT_TABLE).len(), 1);
            assert_eq!(v.table("allergies").len(), p.table("allergies").len());
            assert_eq!(v.table("admissions").len(), v.table("discharge_summaries").len());
            assert!(v.table("appointments").len() <= 1);
        }
        // the first visit is always an admission
        assert_eq!(views[0].table("admissions").len(), 1);
        // each visit-owned row lands in exactly one view
        let total: usize = views.iter().map(|v| v.table("visit_logs").len()).sum();
        assert_eq!(total, p.table("visit_logs").len());
    }

    #[test]
    fn features_by_qualified_name() {
        let (schema, c) = cohort(1);
        let v = &visit_records(&schema, &c.patients[0])[0];
        assert!(v.feature("vital_signs.systolic_bp").and_then(Value::as_f64).is_some());
        assert!(v.feature("nope").is_none());
        assert!(v.feature("vital_signs.nope").is_none());
    }

    #[test]
    fn removing_a_visit_removes_its_dependents_only() {
        let (schema, c) = cohort(1);
        let mut p = c.patients[0].clone();
        let views = visit_records(&schema, &p);
        let victim = views[0].visit_id;
        let owned: usize = views[0]
            .rows
            .iter()
            .filter(|(t, _)| {
                !["patient_details", "emergency_contacts", "immunizations", "allergies", "medical_histories", "appointments"]
                    .contains(&t.as_str())
            })
            .map(|(_, r)| r.len())
            .sum();
        let before = p.row_count();
        let removed = remove_visits(&schema, &mut p, &BTreeSet::from([victim]));
        assert_eq!(removed, owned);
        assert_eq!(p.row_count(), before - owned);
        assert_eq!(visit_records(&schema, &p).len(), views.len() - 1);
        assert_eq!(p.table(PATIENT_TABLE).len(), 1);
        assert_eq!(p.provenance.len(), p.row_count());
        for prov in &p.provenance {
            assert!(prov.row < p.table(&prov.table).len());
        }
    }
}
