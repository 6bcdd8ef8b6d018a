//! Patient-bundle assembly.
//!
//! The assembler decides structure (how many visits, which staff, which
//! dates) from the patient seed and asks the backend only for content.

use chrono::{Days, Months, NaiveDate, NaiveDateTime, NaiveTime};
use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::fnv1a;
use super::template::{render_prompt, PromptContext, TemplateSet};
use super::{parse_structured_output, CountRange, GenerationBackend, GenerationConfig, GenerationError};
use crate::catalog::{self, DEPARTMENTS};
use crate::schema::{topological_order, SchemaDef, REFERENCE_TABLES};
use crate::value::{Record, Value};

/// Table name to rows, in load order.
pub type TableRows = IndexMap<String, Vec<Record>>;

/// Where one row came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowProvenance {
    pub table: String,
    /// Index of the row within its table in this bundle.
    pub row: usize,
    pub backend: String,
    /// Seed of the attempt that succeeded.
    pub seed: u64,
    pub attempts: u32,
}

/// Staff, departments, wards and beds, generated once per cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceData {
    pub rows: TableRows,
    pub provenance: Vec<RowProvenance>,
}

/// One patient's rows across every patient-facing table.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientBundle {
    pub patient_id: i64,
    pub seed: u64,
    pub rows: TableRows,
    pub provenance: Vec<RowProvenance>,
}

impl PatientBundle {
    pub fn table(&self, name: &str) -> &[Record] {
        self.rows.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn row_count(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }
}

impl ReferenceData {
    pub fn table(&self, name: &str) -> &[Record] {
        self.rows.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub base_seed: u64,
    pub backend: String,
    pub reference: ReferenceData,
    pub patients: Vec<PatientBundle>,
}

impl Cohort {
    /// All rows of the cohort grouped per table, in the schema's load order.
    pub fn merged(&self, schema: &SchemaDef) -> TableRows {
        let order = topological_order(schema).unwrap_or_else(|_| schema.table_names().map(String::from).collect());
        let mut out: TableRows = order.iter().map(|t| (t.clone(), Vec::new())).collect();
        let sources = std::iter::once(&self.reference.rows).chain(self.patients.iter().map(|p| &p.rows));
        for rows in sources {
            for (table, records) in rows {
                out.entry(table.clone()).or_default().extend(records.iter().cloned());
            }
        }
        out
    }

    pub fn row_count(&self) -> usize {
        self.reference.rows.values().map(Vec::len).sum::<usize>()
            + self.patients.iter().map(PatientBundle::row_count).sum::<usize>()
    }
}

/// Everything needed to generate rows.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    pub schema: &'a SchemaDef,
    pub templates: &'a TemplateSet,
    pub backend: &'a dyn GenerationBackend,
    pub config: &'a GenerationConfig,
}

impl<'a> Generator<'a> {
    pub fn new(
        schema: &'a SchemaDef,
        templates: &'a TemplateSet,
        backend: &'a dyn GenerationBackend,
        config: &'a GenerationConfig,
    ) -> Self {
        Self {
            schema,
            templates,
            backend,
            config,
        }
    }
}

const ROWS_PER_PATIENT_ID_SPACE: i64 = 100_000;

struct Assembler<'g, 'a> {
    gen: &'g Generator<'a>,
    rng: ChaCha8Rng,
    seed_base: u64,
    next_row: u64,
    id_base: i64,
    patient_index: Option<usize>,
    rows: TableRows,
    provenance: Vec<RowProvenance>,
}

impl<'g, 'a> Assembler<'g, 'a> {
    fn new(gen: &'g Generator<'a>, seed_base: u64, id_base: i64, patient_index: Option<usize>, tables: &[String]) -> Self {
        Self {
            gen,
            rng: ChaCha8Rng::seed_from_u64(seed_base),
            seed_base,
            next_row: 0,
            id_base,
            patient_index,
            rows: tables.iter().map(|t| (t.clone(), Vec::new())).collect(),
            provenance: Vec::new(),
        }
    }

    fn next_id(&self, table: &str) -> i64 {
        self.id_base + self.rows.get(table).map_or(0, Vec::len) as i64 + 1
    }

    fn count(&mut self, r: CountRange) -> u32 {
        self.rng.gen_range(r.min..=r.max)
    }

    /// Prompts for `table`, retrying with seed + attempt, then merges the
    /// parsed fields over the assembler-owned `fixed` cells.
    fn generate(&mut self, table: &str, context: PromptContext, fixed: Record) -> Result<Record, GenerationError> {
        let gen = self.gen;
        let template = gen
            .templates
            .get(table)
            .ok_or_else(|| GenerationError::Template(format!("no template for table '{table}'")))?;
        let table_def = gen.schema.table(table).ok_or_else(|| GenerationError::Schema {
            table: table.to_string(),
            detail: "table is not in the schema".into(),
        })?;
        let prompt = render_prompt(template, &context)?;
        let row_seed = self.seed_base.wrapping_mul(1_000_003).wrapping_add(self.next_row);
        self.next_row += 1;

        let limit = gen.config.retry_limit;
        let mut last_error = String::new();
        for attempt in 0..=limit {
            let seed = row_seed.wrapping_add(u64::from(attempt));
            let parsed = gen
                .backend
                .complete(&prompt, seed, gen.config.max_len)
                .map_err(|e| e.to_string())
                .and_then(|text| {
                    parse_structured_output(&text, table_def, &template.output_spec).map_err(|e| e.to_string())
                });
            match parsed {
                Ok(generated) => {
                    let mut record = fixed;
                    for (k, v) in generated.iter() {
                        record.set(k, v.clone());
                    }
                    let record = record.conform(table_def).map_err(|detail| GenerationError::Schema {
                        table: table.to_string(),
                        detail,
                    })?;
                    let rows = self.rows.entry(table.to_string()).or_default();
                    self.provenance.push(RowProvenance {
                        table: table.to_string(),
                        row: rows.len(),
                        backend: gen.backend.id().to_string(),
                        seed,
                        attempts: attempt + 1,
                    });
                    rows.push(record.clone());
                    return Ok(record);
                }
                Err(e) => {
                    tracing::debug!(table, attempt, error = %e, "completion rejected");
                    last_error = e;
                }
            }
        }
        Err(GenerationError::GenerationFailed {
            table: table.to_string(),
            patient_index: self.patient_index,
            attempts: limit + 1,
            last_error,
        })
    }
}

fn ctx(pairs: &[(&str, String)]) -> PromptContext {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Generates the reference tables for a cohort.
pub fn generate_reference(gen: &Generator<'_>, base_seed: u64) -> Result<ReferenceData, GenerationError> {
    let tables: Vec<String> = REFERENCE_TABLES.iter().map(|s| s.to_string()).collect();
    let mut a = Assembler::new(gen, fnv1a(b"reference") ^ base_seed, 0, None, &tables);
    let counts = &gen.config.counts;

    let n = DEPARTMENTS.len();
    let mut departments = Vec::new();
    for i in 1..=n {
        let id = a.next_id("departments");
        let row = a.generate(
            "departments",
            ctx(&[("department_number", i.to_string()), ("department_count", n.to_string())]),
            Record::new().with("department_id", id),
        )?;
        departments.push((id, row.text("name").unwrap_or_default().to_string()));
    }
    for (dept_id, dept_name) in &departments {
        for j in 1..=counts.staff_per_department {
            let id = a.next_id("staff");
            a.generate(
                "staff",
                ctx(&[("staff_number", j.to_string()), ("department", dept_name.clone())]),
                Record::new().with("staff_id", id).with("department_id", *dept_id),
            )?;
        }
    }
    let mut wards = Vec::new();
    for (dept_id, dept_name) in &departments {
        for j in 1..=counts.wards_per_department {
            let id = a.next_id("wards");
            let row = a.generate(
                "wards",
                ctx(&[("ward_number", j.to_string()), ("department", dept_name.clone())]),
                Record::new().with("ward_id", id).with("department_id", *dept_id),
            )?;
            wards.push((
                id,
                row.text("name").unwrap_or_default().to_string(),
                row.text("ward_type").unwrap_or_default().to_string(),
            ));
        }
    }
    for (ward_id, ward_name, ward_type) in &wards {
        for j in 1..=counts.beds_per_ward {
            let id = a.next_id("beds");
            a.generate(
                "beds",
                ctx(&[
                    ("bed_number", j.to_string()),
                    ("ward", ward_name.clone()),
                    ("ward_type", ward_type.clone()),
                ]),
                Record::new().with("bed_id", id).with("ward_id", *ward_id),
            )?;
        }
    }
    Ok(ReferenceData {
        rows: a.rows,
        provenance: a.provenance,
    })
}

/// Lookup tables over the reference data.
struct RefIndex {
    departments: Vec<(i64, String)>,
    /// (staff_id, department_id, role)
    staff: Vec<(i64, i64, String)>,
    /// (bed_id, department_id)
    beds: Vec<(i64, i64)>,
}

impl RefIndex {
    fn new(reference: &ReferenceData) -> Result<Self, GenerationError> {
        let departments: Vec<(i64, String)> = reference
            .table("departments")
            .iter()
            .filter_map(|r| Some((r.int("department_id")?, r.text("name")?.to_string())))
            .collect();
        let staff: Vec<(i64, i64, String)> = reference
            .table("staff")
            .iter()
            .filter_map(|r| Some((r.int("staff_id")?, r.int("department_id")?, r.text("role")?.to_string())))
            .collect();
        let ward_dept: Vec<(i64, i64)> = reference
            .table("wards")
            .iter()
            .filter_map(|r| Some((r.int("ward_id")?, r.int("department_id")?)))
            .collect();
        let beds = reference
            .table("beds")
            .iter()
            .filter_map(|r| {
                let ward = r.int("ward_id")?;
                let dept = ward_dept.iter().find(|(w, _)| *w == ward)?.1;
                Some((r.int("bed_id")?, dept))
            })
            .collect::<Vec<_>>();
        if departments.is_empty() || staff.is_empty() || beds.is_empty() {
            return Err(GenerationError::Config(
                "reference data needs at least one department, staff member and bed".into(),
            ));
        }
        Ok(Self {
            departments,
            staff,
            beds,
        })
    }

    fn department_named(&self, name: &str) -> Option<i64> {
        self.departments.iter().find(|(_, n)| n == name).map(|(id, _)| *id)
    }

    fn department_name(&self, id: i64) -> &str {
        self.departments
            .iter()
            .find(|(d, _)| *d == id)
            .map(|(_, n)| n.as_str())
            .unwrap_or("")
    }

    fn staff_in<R: Rng>(&self, rng: &mut R, dept: i64, roles: &[&str]) -> i64 {
        let matching: Vec<i64> = self
            .staff
            .iter()
            .filter(|(_, d, r)| *d == dept && roles.contains(&r.as_str()))
            .map(|(id, _, _)| *id)
            .collect();
        let pool = if matching.is_empty() {
            let in_dept: Vec<i64> = self.staff.iter().filter(|(_, d, _)| *d == dept).map(|(id, _, _)| *id).collect();
            if in_dept.is_empty() {
                self.staff.iter().map(|(id, _, _)| *id).collect()
            } else {
                in_dept
            }
        } else {
            matching
        };
        *pool.choose(rng).expect("nonempty staff pool")
    }

    fn physician<R: Rng>(&self, rng: &mut R, dept: i64) -> i64 {
        self.staff_in(rng, dept, &["physician", "surgeon"])
    }

    fn nurse<R: Rng>(&self, rng: &mut R, dept: i64) -> i64 {
        self.staff_in(rng, dept, &["nurse"])
    }

    fn bed<R: Rng>(&self, rng: &mut R, dept: i64) -> i64 {
        let in_dept: Vec<i64> = self.beds.iter().filter(|(_, d)| *d == dept).map(|(b, _)| *b).collect();
        match in_dept.choose(rng) {
            Some(b) => *b,
            None => self.beds.choose(rng).expect("nonempty beds").0,
        }
    }

    /// Department for a condition, falling back to the first department.
    fn for_condition(&self, condition: Option<&catalog::Condition>) -> i64 {
        condition
            .and_then(|c| self.department_named(c.department))
            .or_else(|| self.department_named("Internal Medicine"))
            .unwrap_or(self.departments[0].0)
    }
}

fn date_between<R: Rng>(rng: &mut R, lo: NaiveDate, hi: NaiveDate) -> NaiveDate {
    if hi <= lo {
        return lo;
    }
    let span = (hi - lo).num_days();
    lo + Days::new(rng.gen_range(0..=span) as u64)
}

fn at<R: Rng>(rng: &mut R, day: NaiveDate, hours: std::ops::Range<u32>) -> NaiveDateTime {
    let h = rng.gen_range(hours);
    let m = rng.gen_range(0..4) * 15;
    day.and_time(NaiveTime::from_hms_opt(h, m, 0).expect("valid time"))
}

/// "The patient has chronic asthma." -> "chronic asthma"
fn chronic_phrase(history: &str) -> String {
    let s = history.trim().trim_end_matches('.');
    s.strip_prefix("The patient has ").unwrap_or(s).to_string()
}

/// Generates one patient's bundle. Row ids are `patient_id * 100000 + n`, so
/// bundles from one cohort never collide.
pub fn generate_bundle(
    gen: &Generator<'_>,
    reference: &ReferenceData,
    patient_id: i64,
    patient_seed: u64,
    patient_index: Option<usize>,
) -> Result<PatientBundle, GenerationError> {
    let refs = RefIndex::new(reference)?;
    let order = topological_order(gen.schema).map_err(|e| GenerationError::Config(e.to_string()))?;
    let tables: Vec<String> = order
        .into_iter()
        .filter(|t| !REFERENCE_TABLES.contains(&t.as_str()))
        .collect();
    let mut a = Assembler::new(
        gen,
        patient_seed,
        patient_id * ROWS_PER_PATIENT_ID_SPACE,
        patient_index,
        &tables,
    );
    let cfg = gen.config;
    let counts = &cfg.counts;
    let today = cfg.reference_date;

    let demo = cfg.diversity.sample(&mut a.rng);
    let age = demo.age;
    let birth_anniversary = today
        .checked_sub_months(Months::new(12 * age))
        .ok_or_else(|| GenerationError::Config("reference date too early for patient ages".into()))?;
    let dob = birth_anniversary - Days::new(a.rng.gen_range(0..=364));
    let primary_dept = refs
        .department_named(if age < 18 { "Pediatrics" } else { "Internal Medicine" })
        .unwrap_or(refs.departments[0].0);
    let primary_physician = refs.physician(&mut a.rng, primary_dept);

    let patient = a.generate(
        "patient_details",
        ctx(&[
            ("age", age.to_string()),
            ("gender", demo.gender.clone()),
            ("ethnicity", demo.ethnicity.clone()),
            ("city", demo.city.clone()),
            ("state", demo.state.clone()),
        ]),
        Record::new()
            .with("patient_id", patient_id)
            .with("date_of_birth", dob)
            .with("age", i64::from(age))
            .with("gender", demo.gender.as_str())
            .with("ethnicity", demo.ethnicity.as_str())
            .with("city", demo.city.as_str())
            .with("state", demo.state.as_str())
            .with("primary_physician_id", primary_physician),
    )?;
    let last_name = patient.text("last_name").unwrap_or_default().to_string();
    let history_start = std::cmp::max(dob, today - Months::new(120));

    for i in 1..=a.count(counts.emergency_contacts) {
        let id = a.next_id("emergency_contacts");
        a.generate(
            "emergency_contacts",
            ctx(&[
                ("contact_number", i.to_string()),
                ("age", age.to_string()),
                ("last_name", last_name.clone()),
            ]),
            Record::new().with("contact_id", id).with("patient_id", patient_id),
        )?;
    }
    for i in 1..=a.count(counts.immunizations) {
        let id = a.next_id("immunizations");
        let day = date_between(&mut a.rng, history_start, today);
        let nurse = refs.nurse(&mut a.rng, primary_dept);
        a.generate(
            "immunizations",
            ctx(&[("immunization_number", i.to_string()), ("age", age.to_string())]),
            Record::new()
                .with("immunization_id", id)
                .with("patient_id", patient_id)
                .with("administered_date", day)
                .with("administered_by", nurse),
        )?;
    }
    let mut allergens = Vec::new();
    for i in 1..=a.count(counts.allergies) {
        let id = a.next_id("allergies");
        let day = date_between(&mut a.rng, history_start, today);
        let row = a.generate(
            "allergies",
            ctx(&[("allergy_number", i.to_string()), ("age", age.to_string())]),
            Record::new()
                .with("allergy_id", id)
                .with("patient_id", patient_id)
                .with("recorded_date", day),
        )?;
        if let Some(allergen) = row.text("allergen") {
            if !allergens.iter().any(|a: &String| a == allergen) {
                allergens.push(allergen.to_string());
            }
        }
    }
    let allergy_list = if allergens.is_empty() {
        "none".to_string()
    } else {
        allergens.join(", ")
    };

    let id = a.next_id("medical_histories");
    let day = date_between(&mut a.rng, history_start, today);
    let history = a.generate(
        "medical_histories",
        ctx(&[("age", age.to_string()), ("gender", demo.gender.clone())]),
        Record::new()
            .with("history_id", id)
            .with("patient_id", patient_id)
            .with("recorded_date", day),
    )?;
    let chronic = chronic_phrase(history.text("chronic_conditions").unwrap_or_default());

    let visit_count = a.count(counts.visits);
    let visit_start = std::cmp::max(dob, today - Months::new(36));
    let mut visit_days: Vec<NaiveDate> = (0..visit_count)
        .map(|_| date_between(&mut a.rng, visit_start, today - Days::new(7)))
        .collect();
    visit_days.sort_unstable();

    for (k, visit_day) in visit_days.into_iter().enumerate() {
        let visit_type = if k == 0 {
            "inpatient"
        } else {
            let u: f64 = a.rng.gen();
            if u < counts.inpatient_probability {
                "inpatient"
            } else if u < counts.inpatient_probability + counts.emergency_probability {
                "emergency"
            } else {
                "outpatient"
            }
        };

        let mut appointment_id = Value::Null;
        let mut appointment_reason = "none, unscheduled emergency arrival".to_string();
        if visit_type != "emergency" {
            let id = a.next_id("appointments");
            // the department is only known once the reason is, so draw the
            // row's structural choices up front and patch them in afterwards
            let lead = Days::new(a.rng.gen_range(1..=30));
            let scheduled = at(&mut a.rng, visit_day - lead, 8..17);
            let staff_pick: u64 = a.rng.gen();
            let row = a.generate(
                "appointments",
                ctx(&[("age", age.to_string()), ("chronic_conditions", chronic.clone())]),
                Record::new()
                    .with("appointment_id", id)
                    .with("patient_id", patient_id)
                    .with("staff_id", 0i64)
                    .with("department_id", 0i64)
                    .with("scheduled_at", scheduled)
                    .with("status", "completed"),
            )?;
            appointment_reason = row.text("reason").unwrap_or_default().to_string();
            let dept = refs.for_condition(catalog::condition_by_complaint(&appointment_reason));
            let staff = refs.physician(&mut ChaCha8Rng::seed_from_u64(staff_pick), dept);
            let stored = a.rows["appointments"].last_mut().expect("row just pushed");
            stored.set("staff_id", staff);
            stored.set("department_id", dept);
            appointment_id = Value::Integer(id);
        }

        let visit_id = a.next_id("hospital_visits");
        let staff_pick: u64 = a.rng.gen();
        let visit = a.generate(
            "hospital_visits",
            ctx(&[
                ("age", age.to_string()),
                ("gender", demo.gender.clone()),
                ("chronic_conditions", chronic.clone()),
                ("visit_type", visit_type.to_string()),
                ("appointment_reason", appointment_reason.clone()),
            ]),
            Record::new()
                .with("visit_id", visit_id)
                .with("patient_id", patient_id)
                .with("appointment_id", appointment_id)
                .with("department_id", 0i64)
                .with("attending_staff_id", 0i64)
                .with("visit_date", visit_day)
                .with("visit_type", visit_type),
        )?;
        let complaint = visit.text("chief_complaint").unwrap_or_default().to_string();
        let complaint_condition = catalog::condition_by_complaint(&complaint);
        let dept = if visit_type == "emergency" {
            refs.department_named("Emergency Medicine")
                .unwrap_or_else(|| refs.for_condition(complaint_condition))
        } else {
            refs.for_condition(complaint_condition)
        };
        let attending = refs.physician(&mut ChaCha8Rng::seed_from_u64(staff_pick), dept);
        {
            let stored = a.rows["hospital_visits"].last_mut().expect("row just pushed");
            stored.set("department_id", dept);
            stored.set("attending_staff_id", attending);
        }

        let arrival = at(&mut a.rng, visit_day, 7..20);
        let minutes = |m: i64| arrival + chrono::Duration::minutes(m);
        let base = |id: i64, pk: &str| {
            Record::new()
                .with(pk, id)
                .with("visit_id", visit_id)
                .with("patient_id", patient_id)
        };

        let id = a.next_id("vital_signs");
        a.generate(
            "vital_signs",
            ctx(&[
                ("age", age.to_string()),
                ("gender", demo.gender.clone()),
                ("chief_complaint", complaint.clone()),
            ]),
            base(id, "vital_id").with("recorded_at", minutes(15)),
        )?;

        let id = a.next_id("test_results");
        a.generate(
            "test_results",
            ctx(&[("age", age.to_string()), ("chief_complaint", complaint.clone())]),
            base(id, "test_id")
                .with("ordered_by", attending)
                .with("collected_at", minutes(45)),
        )?;

        let diagnosis_id = a.next_id("diagnoses");
        let dx = a.generate(
            "diagnoses",
            ctx(&[("age", age.to_string()), ("chief_complaint", complaint.clone())]),
            base(diagnosis_id, "diagnosis_id")
                .with("diagnosed_by", attending)
                .with("diagnosis_date", visit_day),
        )?;
        let diagnosis = dx.text("description").unwrap_or_default().to_string();

        let mut admission = None;
        if visit_type == "inpatient" {
            let id = a.next_id("admissions");
            let bed = refs.bed(&mut a.rng, dept);
            let row = a.generate(
                "admissions",
                ctx(&[("diagnosis", diagnosis.clone())]),
                base(id, "admission_id")
                    .with("bed_id", bed)
                    .with("admitting_staff_id", attending)
                    .with("admitted_at", minutes(180)),
            )?;
            admission = Some((id, row.text("admission_reason").unwrap_or_default().to_string()));
        }

        let plan_id = a.next_id("treatment_plans");
        let end_date = if a.rng.gen_bool(0.3) {
            Value::Null
        } else {
            Value::Date(visit_day + Days::new(a.rng.gen_range(7..=90)))
        };
        let plan_row = a.generate(
            "treatment_plans",
            ctx(&[("age", age.to_string()), ("diagnosis", diagnosis.clone())]),
            Record::new()
                .with("plan_id", plan_id)
                .with("diagnosis_id", diagnosis_id)
                .with("patient_id", patient_id)
                .with("created_by", attending)
                .with("start_date", visit_day)
                .with("end_date", end_date),
        )?;
        let plan = plan_row.text("plan_description").unwrap_or_default().to_string();

        for m in 1..=a.count(counts.medications_per_plan) {
            let id = a.next_id("medications");
            a.generate(
                "medications",
                ctx(&[
                    ("medication_number", m.to_string()),
                    ("diagnosis", diagnosis.clone()),
                    ("plan", plan.clone()),
                    ("allergies", allergy_list.clone()),
                ]),
                Record::new()
                    .with("medication_id", id)
                    .with("plan_id", plan_id)
                    .with("patient_id", patient_id)
                    .with("prescribed_by", attending)
                    .with("start_date", visit_day),
            )?;
        }

        let id = a.next_id("clinical_notes");
        a.generate(
            "clinical_notes",
            ctx(&[
                ("age", age.to_string()),
                ("gender", demo.gender.clone()),
                ("chief_complaint", complaint.clone()),
                ("diagnosis", diagnosis.clone()),
                ("plan", plan.clone()),
            ]),
            base(id, "note_id")
                .with("author_id", attending)
                .with("written_at", minutes(120))
                .with("patient_age", i64::from(age))
                .with("patient_gender", demo.gender.as_str()),
        )?;

        let mut events = vec![("check_in", 0), ("triage", 10), ("consultation", 60)];
        if visit_type == "inpatient" && a.rng.gen_bool(0.5) {
            events.push(("procedure", 150));
        }
        if visit_type != "outpatient" {
            events.push(("medication_administered", 200));
        }
        events.push(("check_out", 240));
        for (event, offset) in events {
            let id = a.next_id("visit_logs");
            let staff = match event {
                "consultation" | "procedure" => attending,
                _ => refs.nurse(&mut a.rng, dept),
            };
            a.generate(
                "visit_logs",
                ctx(&[("event", event.to_string()), ("chief_complaint", complaint.clone())]),
                base(id, "log_id")
                    .with("staff_id", staff)
                    .with("logged_at", minutes(offset))
                    .with("event", event),
            )?;
        }

        let mut last_day = visit_day;
        if let Some((admission_id, reason)) = admission {
            let id = a.next_id("discharge_summaries");
            let discharge_day = visit_day + Days::new(a.rng.gen_range(1..=10));
            last_day = discharge_day;
            a.generate(
                "discharge_summaries",
                ctx(&[
                    ("admission_reason", reason),
                    ("diagnosis", diagnosis.clone()),
                    ("plan", plan.clone()),
                ]),
                Record::new()
                    .with("summary_id", id)
                    .with("admission_id", admission_id)
                    .with("patient_id", patient_id)
                    .with("discharged_by", attending)
                    .with("discharge_date", discharge_day),
            )?;
        }

        if k == 0 || a.rng.gen_bool(counts.referral_probability) {
            let specialist = refs.for_condition(catalog::resolve_condition(&diagnosis));
            let target = match refs.department_named("Internal Medicine") {
                _ if specialist != dept => specialist,
                Some(im) if im != dept => im,
                _ => refs
                    .departments
                    .iter()
                    .map(|(id, _)| *id)
                    .filter(|id| *id != dept)
                    .collect::<Vec<_>>()
                    .choose(&mut a.rng)
                    .copied()
                    .unwrap_or(dept),
            };
            let id = a.next_id("referrals");
            a.generate(
                "referrals",
                ctx(&[
                    ("diagnosis", diagnosis.clone()),
                    ("department", refs.department_name(target).to_string()),
                ]),
                base(id, "referral_id")
                    .with("referring_staff_id", attending)
                    .with("referred_department_id", target)
                    .with("referral_date", visit_day),
            )?;
        }

        let id = a.next_id("billing");
        let billed = last_day + Days::new(a.rng.gen_range(0..=30));
        a.generate(
            "billing",
            ctx(&[("visit_type", visit_type.to_string())]),
            base(id, "bill_id").with("billing_date", billed),
        )?;
    }

    Ok(PatientBundle {
        patient_id,
        seed: patient_seed,
        rows: a.rows,
        provenance: a.provenance,
    })
}

/// Generates `n` patients with ids 1..=n and seeds `base_seed + index`,
/// on at most `workers` threads. Output does not depend on `workers`.
pub fn generate_cohort(gen: &Generator<'_>, n: usize, base_seed: u64, workers: usize) -> Result<Cohort, GenerationError> {
    if n == 0 {
        return Err(GenerationError::Config("cohort size must be at least 1".into()));
    }
    gen.config.validate()?;
    gen.templates.validate(gen.schema)?;
    let reference = generate_reference(gen, base_seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GenerationError::Config(format!("worker pool: {e}")))?;
    let patients = pool.install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| generate_bundle(gen, &reference, i as i64 + 1, base_seed.wrapping_add(i as u64), Some(i)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(Cohort {
        base_seed,
        backend: gen.backend.id().to_string(),
        reference,
        patients,
    })
}
