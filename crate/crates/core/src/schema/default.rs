//! The built-in 22-table EHR schema.
//!
//! Column lists are a design artifact of this crate; only the table set is
//! fixed. Hard ranges follow the documented defaults (potassium 1-10 mmol/L,
//! diastolic 20-150 mmHg, ...); soft ranges bracket values that are unusual
//! but survivable.

use super::{ColumnDef, ColumnKind, PhysiologicRange, SchemaDef, TableDef};

/// Tables seeded once per cohort rather than per patient.
pub const REFERENCE_TABLES: [&str; 4] = ["departments", "staff", "wards", "beds"];

pub const GENDERS: [&str; 4] = ["female", "male", "nonbinary", "unknown"];
pub const ETHNICITIES: [&str; 7] = [
    "american_indian_or_alaska_native",
    "asian",
    "black_or_african_american",
    "hispanic_or_latino",
    "native_hawaiian_or_pacific_islander",
    "white",
    "multiracial",
];
pub const BLOOD_GROUPS: [&str; 8] = ["A+", "A-", "B+", "B-", "AB+", "AB-", "O+", "O-"];
pub const SEVERITY_CLASSES: [&str; 6] = [
    "hypotension",
    "normal",
    "elevated",
    "stage_1_hypertension",
    "stage_2_hypertension",
    "hypertensive_crisis",
];

fn int(name: &str) -> ColumnDef {
    ColumnDef::new(name, ColumnKind::Integer)
}
fn dec(name: &str) -> ColumnDef {
    ColumnDef::new(name, ColumnKind::Decimal)
}
fn text(name: &str) -> ColumnDef {
    ColumnDef::new(name, ColumnKind::Text)
}
fn date(name: &str) -> ColumnDef {
    ColumnDef::new(name, ColumnKind::Date)
}
fn ts(name: &str) -> ColumnDef {
    ColumnDef::new(name, ColumnKind::Timestamp)
}
fn choice(name: &str, values: &[&str]) -> ColumnDef {
    ColumnDef::new(name, ColumnKind::enum_values(values))
}
fn ranged(name: &str, hard_min: f64, soft_min: f64, soft_max: f64, hard_max: f64, unit: &str) -> ColumnDef {
    dec(name).ranged(PhysiologicRange::new(hard_min, soft_min, soft_max, hard_max), unit)
}

/// Builds the 22-table schema in the canonical table order.
pub fn build_default_schema() -> SchemaDef {
    let staff = TableDef::new("staff", "staff_id")
        .col(int("staff_id"))
        .fk("department_id", "departments", "department_id", false)
        .col(text("first_name"))
        .col(text("last_name"))
        .col(choice("role", &["physician", "nurse", "surgeon", "pharmacist", "technician"]))
        .col(text("specialty"))
        .col(text("phone"))
        .col(date("hire_date"));

    let departments = TableDef::new("departments", "department_id")
        .col(int("department_id"))
        .col(text("name"))
        .col(int("floor"))
        .col(text("phone"));

    let wards = TableDef::new("wards", "ward_id")
        .col(int("ward_id"))
        .fk("department_id", "departments", "department_id", false)
        .col(text("name"))
        .col(choice(
            "ward_type",
            &["general", "intensive_care", "pediatric", "maternity", "surgical"],
        ))
        .col(int("capacity"));

    let beds = TableDef::new("beds", "bed_id")
        .col(int("bed_id"))
        .fk("ward_id", "wards", "ward_id", false)
        .col(text("bed_number"))
        .col(choice("bed_type", &["standard", "icu", "pediatric", "bariatric"]))
        .col(ColumnDef::new("is_available", ColumnKind::Boolean));

    let patient_details = TableDef::new("patient_details", "patient_id")
        .col(int("patient_id"))
        .col(text("first_name"))
        .col(text("last_name"))
        .col(date("date_of_birth"))
        .col(int("age").ranged(PhysiologicRange::new(0.0, 0.0, 105.0, 120.0), "years"))
        .col(choice("gender", &GENDERS))
        .col(choice("ethnicity", &ETHNICITIES))
        .col(choice("blood_group", &BLOOD_GROUPS))
        .col(text("city"))
        .col(text("state"))
        .col(text("phone"))
        .fk("primary_physician_id", "staff", "staff_id", true);

    let emergency_contacts = TableDef::new("emergency_contacts", "contact_id")
        .col(int("contact_id"))
        .fk("patient_id", "patient_details", "patient_id", false)
        .col(text("name"))
        .col(choice(
            "relationship",
            &["spouse", "parent", "child", "sibling", "friend", "guardian"],
        ))
        .col(text("phone"));

    let vital_signs = TableDef::new("vital_signs", "vital_id")
        .col(int("vital_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .col(ts("recorded_at"))
        .col(ranged("systolic_bp", 50.0, 80.0, 200.0, 260.0, "mmHg"))
        .col(ranged("diastolic_bp", 20.0, 40.0, 120.0, 150.0, "mmHg"))
        .col(ranged("heart_rate", 20.0, 40.0, 150.0, 260.0, "bpm"))
        .col(ranged("respiratory_rate", 4.0, 8.0, 35.0, 70.0, "breaths/min"))
        .col(ranged("temperature_c", 30.0, 35.0, 40.5, 44.0, "C"))
        .col(ranged("oxygen_saturation", 50.0, 88.0, 100.0, 100.0, "%"))
        .col(ranged("height_cm", 30.0, 45.0, 210.0, 250.0, "cm"))
        .col(ranged("weight_kg", 0.5, 2.0, 250.0, 400.0, "kg"))
        .col(choice("severity_classification", &SEVERITY_CLASSES));

    let immunizations = TableDef::new("immunizations", "immunization_id")
        .col(int("immunization_id"))
        .fk("patient_id", "patient_details", "patient_id", false)
        .col(text("vaccine"))
        .col(int("dose_number"))
        .col(date("administered_date"))
        .fk("administered_by", "staff", "staff_id", false);

    let allergies = TableDef::new("allergies", "allergy_id")
        .col(int("allergy_id"))
        .fk("patient_id", "patient_details", "patient_id", false)
        .col(text("allergen"))
        .col(text("reaction"))
        .col(choice("severity", &["mild", "moderate", "severe"]))
        .col(date("recorded_date"));

    let medical_histories = TableDef::new("medical_histories", "history_id")
        .col(int("history_id"))
        .fk("patient_id", "patient_details", "patient_id", false)
        .col(text("chronic_conditions"))
        .col(text("past_surgeries"))
        .col(text("family_history"))
        .col(date("recorded_date"));

    let appointments = TableDef::new("appointments", "appointment_id")
        .col(int("appointment_id"))
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("staff_id", "staff", "staff_id", false)
        .fk("department_id", "departments", "department_id", false)
        .col(ts("scheduled_at"))
        .col(text("reason"))
        .col(choice("status", &["scheduled", "completed", "cancelled", "no_show"]));

    let hospital_visits = TableDef::new("hospital_visits", "visit_id")
        .col(int("visit_id"))
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("appointment_id", "appointments", "appointment_id", true)
        .fk("department_id", "departments", "department_id", false)
        .fk("attending_staff_id", "staff", "staff_id", false)
        .col(date("visit_date"))
        .col(choice("visit_type", &["outpatient", "inpatient", "emergency"]))
        .col(text("chief_complaint"));

    let test_results = TableDef::new("test_results", "test_id")
        .col(int("test_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("ordered_by", "staff", "staff_id", false)
        .col(ts("collected_at"))
        .col(ranged("potassium_mmol_l", 1.0, 2.5, 6.5, 10.0, "mmol/L"))
        .col(ranged("sodium_mmol_l", 100.0, 120.0, 160.0, 180.0, "mmol/L"))
        .col(ranged("glucose_mg_dl", 20.0, 50.0, 400.0, 1500.0, "mg/dL"))
        .col(ranged("creatinine_mg_dl", 0.1, 0.3, 5.0, 20.0, "mg/dL"))
        .col(ranged("hemoglobin_g_dl", 3.0, 7.0, 20.0, 25.0, "g/dL"))
        .col(ranged("wbc_k_ul", 0.1, 2.0, 30.0, 200.0, "10^3/uL"))
        .col(text("interpretation"));

    let diagnoses = TableDef::new("diagnoses", "diagnosis_id")
        .col(int("diagnosis_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("diagnosed_by", "staff", "staff_id", false)
        .col(text("icd10_code"))
        .col(text("description"))
        .col(date("diagnosis_date"))
        .col(choice("status", &["provisional", "confirmed"]));

    let admissions = TableDef::new("admissions", "admission_id")
        .col(int("admission_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("bed_id", "beds", "bed_id", false)
        .fk("admitting_staff_id", "staff", "staff_id", false)
        .col(ts("admitted_at"))
        .col(text("admission_reason"));

    let treatment_plans = TableDef::new("treatment_plans", "plan_id")
        .col(int("plan_id"))
        .fk("diagnosis_id", "diagnoses", "diagnosis_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("created_by", "staff", "staff_id", false)
        .col(text("plan_description"))
        .col(date("start_date"))
        .col(date("end_date").nullable());

    let medications = TableDef::new("medications", "medication_id")
        .col(int("medication_id"))
        .fk("plan_id", "treatment_plans", "plan_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("prescribed_by", "staff", "staff_id", false)
        .col(text("drug_name"))
        .col(text("dose"))
        .col(choice(
            "route",
            &["oral", "intravenous", "intramuscular", "subcutaneous", "inhaled", "topical"],
        ))
        .col(text("frequency"))
        .col(date("start_date"));

    let clinical_notes = TableDef::new("clinical_notes", "note_id")
        .col(int("note_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("author_id", "staff", "staff_id", false)
        .col(ts("written_at"))
        .col(int("patient_age"))
        .col(choice("patient_gender", &GENDERS))
        .col(text("note_text"));

    let visit_logs = TableDef::new("visit_logs", "log_id")
        .col(int("log_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("staff_id", "staff", "staff_id", false)
        .col(ts("logged_at"))
        .col(choice(
            "event",
            &[
                "check_in",
                "triage",
                "consultation",
                "procedure",
                "medication_administered",
                "check_out",
            ],
        ))
        .col(text("details"));

    let discharge_summaries = TableDef::new("discharge_summaries", "summary_id")
        .col(int("summary_id"))
        .fk("admission_id", "admissions", "admission_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("discharged_by", "staff", "staff_id", false)
        .col(date("discharge_date"))
        .col(text("discharge_diagnosis"))
        .col(text("summary_text"))
        .col(choice(
            "disposition",
            &["home", "home_health", "skilled_nursing", "rehabilitation", "transfer"],
        ));

    let referrals = TableDef::new("referrals", "referral_id")
        .col(int("referral_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .fk("referring_staff_id", "staff", "staff_id", false)
        .fk("referred_department_id", "departments", "department_id", false)
        .col(text("reason"))
        .col(date("referral_date"))
        .col(choice("urgency", &["routine", "urgent"]));

    let billing = TableDef::new("billing", "bill_id")
        .col(int("bill_id"))
        .fk("visit_id", "hospital_visits", "visit_id", false)
        .fk("patient_id", "patient_details", "patient_id", false)
        .col(dec("amount"))
        .col(text("insurance_provider"))
        .col(choice("status", &["pending", "paid", "denied"]))
        .col(date("billing_date"));

    SchemaDef {
        tables: vec![
            staff,
            departments,
            wards,
            beds,
            patient_details,
            emergency_contacts,
            vital_signs,
            immunizations,
            allergies,
            medical_histories,
            appointments,
            hospital_visits,
            test_results,
            diagnoses,
            admissions,
            treatment_plans,
            medications,
            clinical_notes,
            visit_logs,
            discharge_summaries,
            referrals,
            billing,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{check_value_ranges, topological_order, Severity};
    use crate::value::{Record, Value};

    const EXPECTED_TABLES: [&str; 22] = [
        "staff",
        "departments",
        "wards",
        "beds",
        "patient_details",
        "emergency_contacts",
        "vital_signs",
        "immunizations",
        "allergies",
        "medical_histories",
        "appointments",
        "hospital_visits",
        "test_results",
        "diagnoses",
        "admissions",
        "treatment_plans",
        "medications",
        "clinical_notes",
        "visit_logs",
        "discharge_summaries",
        "referrals",
        "billing",
    ];

    #[test]
    fn has_the_22_tables() {
        let schema = build_default_schema();
        let names: Vec<&str> = schema.table_names().collect();
        assert_eq!(names, EXPECTED_TABLES);
        schema.validate().unwrap();
    }

    #[test]
    fn allergies_link_to_patients() {
        let schema = build_default_schema();
        assert!(schema.table("allergies").unwrap().references("patient_details"));
    }

    #[test]
    fn patient_facing_tables_link_to_patients() {
        let schema = build_default_schema();
        for t in &schema.tables {
            if REFERENCE_TABLES.contains(&t.name.as_str()) || t.name == "patient_details" {
                continue;
            }
            assert!(t.references("patient_details"), "{} lacks patient FK", t.name);
        }
        for name in [
            "vital_signs",
            "test_results",
            "diagnoses",
            "admissions",
            "clinical_notes",
            "visit_logs",
            "referrals",
            "billing",
        ] {
            assert!(schema.table(name).unwrap().references("hospital_visits"));
        }
        assert!(schema.table("discharge_summaries").unwrap().references("admissions"));
    }

    #[test]
    fn diastolic_hard_min_is_positive() {
        let schema = build_default_schema();
        let r = schema
            .table("vital_signs")
            .unwrap()
            .column("diastolic_bp")
            .unwrap()
            .range
            .unwrap();
        assert!(r.hard_min > 0.0);
    }

    #[test]
    fn every_range_is_ordered() {
        for t in &build_default_schema().tables {
            for c in &t.columns {
                if let Some(r) = c.range {
                    assert!(r.is_ordered(), "{}.{}", t.name, c.name);
                }
            }
        }
    }

    #[test]
    fn order_respects_every_edge() {
        let schema = build_default_schema();
        let order = topological_order(&schema).unwrap();
        let pos = |n: &str| order.iter().position(|t| t == n).unwrap();
        for t in &schema.tables {
            for fk in &t.foreign_keys {
                assert!(pos(&fk.table) < pos(&t.name), "{} -> {}", t.name, fk.table);
            }
        }
        assert!(pos("patient_details") < pos("emergency_contacts"));
    }

    fn vitals_row(diastolic: f64) -> Record {
        let table = build_default_schema().table("vital_signs").unwrap().clone();
        let mut r = Record::new();
        for c in &table.columns {
            r.set(&c.name, Value::Null);
        }
        r.set("diastolic_bp", diastolic);
        r.set("systolic_bp", 118.0);
        r
    }

    #[test]
    fn impossible_vitals_are_hard_violations() {
        let schema = build_default_schema();
        let vitals = schema.table("vital_signs").unwrap();
        let v = check_value_ranges(vitals, &vitals_row(0.0)).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].column, "diastolic_bp");
        assert_eq!(v[0].severity, Severity::Hard);
        assert!(check_value_ranges(vitals, &vitals_row(76.0)).unwrap().is_empty());

        let labs = schema.table("test_results").unwrap();
        let mut row = Record::new();
        for c in &labs.columns {
            row.set(&c.name, Value::Null);
        }
        row.set("potassium_mmol_l", 15.0);
        let v = check_value_ranges(labs, &row).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].severity, Severity::Hard);
        assert_eq!(v[0].value, 15.0);
    }
}
