//! JSON-lines persistence for cohorts, so validation can re-run without
//! regenerating.
//!
//! Line 1 is a header, line 2 holds the reference tables, and each further
//! line is one patient bundle:
//!
//! ```text
//! {"format":"ehrsynth-cohort","version":1,"base_seed":1,"backend":"grammar","patients":42}
//! {"reference":{"departments":[{...}],...},"provenance":[...]}
//! {"patient_id":1,"seed":1,"rows":{"patient_details":[{...}],...},"provenance":[...]}
//! ```
//!
//! Cell values are plain JSON; they are typed again on read from the schema.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value as JsonValue;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

use super::{Cohort, PatientBundle, ReferenceData, RowProvenance, TableRows};
use crate::schema::SchemaDef;
use crate::value::Record;

pub const FORMAT: &str = "ehrsynth-cohort";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CohortFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    base_seed: u64,
    backend: String,
    patients: usize,
}

#[derive(Serialize, Deserialize)]
struct ReferenceLine {
    reference: IndexMap<String, Vec<JsonValue>>,
    provenance: Vec<RowProvenance>,
}

#[derive(Serialize, Deserialize)]
struct PatientLine {
    patient_id: i64,
    seed: u64,
    rows: IndexMap<String, Vec<JsonValue>>,
    provenance: Vec<RowProvenance>,
}

fn rows_to_json(rows: &TableRows) -> IndexMap<String, Vec<JsonValue>> {
    rows.iter()
        .map(|(t, recs)| (t.clone(), recs.iter().map(Record::to_json).collect()))
        .collect()
}

fn rows_from_json(
    schema: &SchemaDef,
    json: IndexMap<String, Vec<JsonValue>>,
    line: usize,
) -> Result<TableRows, CohortFileError> {
    json.into_iter()
        .map(|(table, recs)| {
            let def = schema.table(&table).ok_or_else(|| CohortFileError::Format {
                line,
                detail: format!("unknown table '{table}'"),
            })?;
            let records = recs
                .iter()
                .map(|r| Record::from_json(def, r))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|detail| CohortFileError::Format {
                    line,
                    detail: format!("{table}: {detail}"),
                })?;
            Ok((table, records))
        })
        .collect()
}

fn format_err(line: usize, e: impl std::fmt::Display) -> CohortFileError {
    CohortFileError::Format {
        line,
        detail: e.to_string(),
    }
}

pub fn write_cohort<W: Write>(cohort: &Cohort, mut out: W) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        base_seed: cohort.base_seed,
        backend: cohort.backend.clone(),
        patients: cohort.patients.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    serde_json::to_writer(
        &mut out,
        &ReferenceLine {
            reference: rows_to_json(&cohort.reference.rows),
            provenance: cohort.reference.provenance.clone(),
        },
    )?;
    out.write_all(b"\n")?;
    for p in &cohort.patients {
        serde_json::to_writer(
            &mut out,
            &PatientLine {
                patient_id: p.patient_id,
                seed: p.seed,
                rows: rows_to_json(&p.rows),
                provenance: p.provenance.clone(),
            },
        )?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_cohort<R: BufRead>(schema: &SchemaDef, input: R) -> Result<Cohort, CohortFileError> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String), CohortFileError> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((n, Err(e))) => Err(format_err(n, e)),
            None => Err(format_err(0, format!("file ends before the {what} line"))),
        }
    };
    let (n, line) = next("header")?;
    let header: Header = serde_json::from_str(&line).map_err(|e| format_err(n, e))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(format_err(
            n,
            format!("expected {FORMAT} v{VERSION}, found {} v{}", header.format, header.version),
        ));
    }
    let (n, line) = next("reference")?;
    let reference: ReferenceLine = serde_json::from_str(&line).map_err(|e| format_err(n, e))?;
    let reference = ReferenceData {
        rows: rows_from_json(schema, reference.reference, n)?,
        provenance: reference.provenance,
    };
    let mut patients = Vec::with_capacity(header.patients);
    for _ in 0..header.patients {
        let (n, line) = next("patient")?;
        let p: PatientLine = serde_json::from_str(&line).map_err(|e| format_err(n, e))?;
        patients.push(PatientBundle {
            patient_id: p.patient_id,
            seed: p.seed,
            rows: rows_from_json(schema, p.rows, n)?,
            provenance: p.provenance,
        });
    }
    Ok(Cohort {
        base_seed: header.base_seed,
        backend: header.backend,
        reference,
        patients,
    })
}

pub fn save(cohort: &Cohort, path: &Path) -> Result<(), CohortFileError> {
    let io = |source| CohortFileError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io)?;
    write_cohort(cohort, std::io::BufWriter::new(file)).map_err(io)
}

pub fn load(schema: &SchemaDef, path: &Path) -> Result<Cohort, CohortFileError> {
    let file = std::fs::File::open(path).map_err(|source| CohortFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_cohort(schema, std::io::BufReader::new(file))
}
