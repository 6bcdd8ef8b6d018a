//! Shared integration-test helpers: small cohorts and a throwaway
//! PostgreSQL cluster.

#![allow(dead_code)]

pub mod oracle;
pub mod pg;

#[allow(unused_imports)]
pub use pg::TempPg;

use ehrsynth_core::anomaly::{Cell, FeaturePlan, FeatureRow};
use ehrsynth_core::config::PipelineConfig;
use ehrsynth_core::pipeline::{gate_cohort, generate, resolve_schema, validate};
use ehrsynth_core::schema::SchemaDef;
use ehrsynth_core::synth::Cohort;

pub fn config(patients: usize, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.generation.patients = patients;
    c.generation.seed = seed;
    c
}

/// A grammar-backend cohort on the default schema.
pub fn cohort(patients: usize, seed: u64) -> (SchemaDef, Cohort) {
    let c = config(patients, seed);
    let schema = resolve_schema(&c).unwrap();
    let cohort = generate(&c, &schema).unwrap();
    (schema, cohort)
}

/// The cohort after validation and gating, as the pipeline would load it.
pub fn gated_cohort(patients: usize, seed: u64) -> (SchemaDef, Cohort) {
    let c = config(patients, seed);
    let (schema, cohort) = cohort(patients, seed);
    let v = validate(&c, &schema, &cohort).unwrap();
    let gated = gate_cohort(&schema, &cohort, &v.report.rows).cohort;
    (schema, gated)
}

/// 1,000 plausible lab and vital rows plus 20 with one hard-range value
/// each; the last column marks the injected rows.
pub fn load_outlier_fixture() -> (Vec<FeatureRow>, Vec<bool>, FeaturePlan) {
    let text = include_str!("../fixtures/anomaly_outliers.csv");
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let n = headers.len() - 1;
    let mut rows = Vec::new();
    let mut injected = Vec::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        rows.push((0..n).map(|j| Some(Cell::Num(rec[j].parse().unwrap()))).collect());
        injected.push(&rec[n] == "1");
    }
    let plan = FeaturePlan {
        numeric: headers[..n].to_vec(),
        categorical: vec![],
    };
    (rows, injected, plan)
}

