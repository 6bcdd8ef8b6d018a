//! Per-table prompt templates and prompt rendering.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use super::GenerationError;
use crate::schema::{SchemaDef, TableDef};

/// Context handed to a template: placeholder name to value. Ordered so that
/// rendered prompts are byte-stable.
pub type PromptContext = BTreeMap<String, String>;

pub const BLOCK_TAG: &str = "record";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub table: String,
    /// Prose with `{name}` placeholders.
    pub template: String,
    /// Fields the completion must supply, in order.
    pub output_spec: Vec<String>,
}

impl PromptTemplate {
    pub fn new(table: &str, template: &str, output_spec: &[&str]) -> Self {
        Self {
            table: table.to_string(),
            template: template.to_string(),
            output_spec: output_spec.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut rest = self.template.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    let name = &after[..close];
                    if is_placeholder_name(name) && !out.iter().any(|n| n == name) {
                        out.push(name.to_string());
                    }
                    rest = &after[close + 1..];
                }
                None => break,
            }
        }
        out
    }

    pub fn check_against(&self, table: &TableDef) -> Result<(), GenerationError> {
        for field in &self.output_spec {
            if table.column(field).is_none() {
                return Err(GenerationError::Template(format!(
                    "template for '{}' requests unknown field '{field}'",
                    self.table
                )));
            }
        }
        Ok(())
    }
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Substitutes placeholders from `context`. When the template declares
/// output fields, a context listing and fenced-block format instructions are
/// appended; a template with no placeholders and no output fields renders
/// verbatim.
pub fn render_prompt(template: &PromptTemplate, context: &PromptContext) -> Result<String, GenerationError> {
    let mut text = String::with_capacity(template.template.len() + 256);
    let mut rest = template.template.as_str();
    while let Some(open) = rest.find('{') {
        text.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_placeholder_name(&after[..close]) => {
                let name = &after[..close];
                let value = context
                    .get(name)
                    .ok_or_else(|| GenerationError::MissingPlaceholder(name.to_string()))?;
                text.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                text.push('{');
                rest = after;
            }
        }
    }
    text.push_str(rest);

    if !template.output_spec.is_empty() {
        text.push_str("\n\nTable: ");
        text.push_str(&template.table);
        text.push_str("\nContext:\n");
        for (k, v) in context {
            text.push_str(&format!("- {k}: {v}\n"));
        }
        text.push_str(
            "Respond with exactly one fenced block using one `field: value` line per field, \
             in this form:\n",
        );
        text.push_str(&format!("```{BLOCK_TAG}\n"));
        for field in &template.output_spec {
            text.push_str(&format!("{field}: <value>\n"));
        }
        text.push_str("```\n");
    }
    Ok(text)
}

/// Templates for every generated table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub templates: IndexMap<String, PromptTemplate>,
}

#[derive(Deserialize)]
struct TemplateFile {
    templates: Vec<PromptTemplate>,
}

impl TemplateSet {
    pub fn get(&self, table: &str) -> Option<&PromptTemplate> {
        self.templates.get(table)
    }

    pub fn validate(&self, schema: &SchemaDef) -> Result<(), GenerationError> {
        for table in &schema.tables {
            let template = self
                .get(&table.name)
                .ok_or_else(|| GenerationError::Template(format!("no template for table '{}'", table.name)))?;
            template.check_against(table)?;
        }
        Ok(())
    }

    /// Reads `[[templates]]` entries from a TOML file.
    pub fn load(path: &Path) -> Result<TemplateSet, GenerationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenerationError::Template(format!("{}: {e}", path.display())))?;
        let file: TemplateFile = toml::from_str(&text)
            .map_err(|e| GenerationError::Template(format!("{}: {e}", path.display())))?;
        Ok(TemplateSet {
            templates: file.templates.into_iter().map(|t| (t.table.clone(), t)).collect(),
        })
    }

    pub fn builtin() -> TemplateSet {
        let t = PromptTemplate::new;
        let list = vec![
            t(
                "departments",
                "Name hospital department number {department_number} of {department_count} and give its floor and main phone line.",
                &["name", "floor", "phone"],
            ),
            t(
                "staff",
                "Create staff member {staff_number} of the {department} department: full name, role, clinical specialty, phone and hire date.",
                &["first_name", "last_name", "role", "specialty", "phone", "hire_date"],
            ),
            t(
                "wards",
                "Describe inpatient ward {ward_number} belonging to the {department} department with its type and bed capacity.",
                &["name", "ward_type", "capacity"],
            ),
            t(
                "beds",
                "Create bed {bed_number} in the {ward} ward ({ward_type}) with its bed type and availability.",
                &["bed_number", "bed_type", "is_available"],
            ),
            t(
                "patient_details",
                "Create a realistic patient who is a {age}-year-old {gender} of {ethnicity} ethnicity living in {city}, {state}. Give a culturally plausible name, blood group and phone number.",
                &["first_name", "last_name", "blood_group", "phone"],
            ),
            t(
                "emergency_contacts",
                "Create emergency contact {contact_number} for a {age}-year-old patient whose family name is {last_name}.",
                &["name", "relationship", "phone"],
            ),
            t(
                "immunizations",
                "Record immunization {immunization_number} appropriate for a {age}-year-old patient, with the vaccine and dose number.",
                &["vaccine", "dose_number"],
            ),
            t(
                "allergies",
                "Record allergy {allergy_number} for a {age}-year-old patient: allergen, typical reaction and severity.",
                &["allergen", "reaction", "severity"],
            ),
            t(
                "medical_histories",
                "Write the medical history of a {age}-year-old {gender} patient: chronic conditions, past surgeries and family medical history, each as a short sentence.",
                &["chronic_conditions", "past_surgeries", "family_history"],
            ),
            t(
                "appointments",
                "A {age}-year-old patient with {chronic_conditions} books a clinic appointment. State the reason for the visit.",
                &["reason"],
            ),
            t(
                "hospital_visits",
                "A {age}-year-old {gender} patient with {chronic_conditions} arrives for a {visit_type} visit (booked reason: {appointment_reason}). State the chief complaint.",
                &["chief_complaint"],
            ),
            t(
                "vital_signs",
                "Record vital signs for a {age}-year-old {gender} patient presenting with {chief_complaint}, including the blood pressure severity classification.",
                &[
                    "systolic_bp",
                    "diastolic_bp",
                    "heart_rate",
                    "respiratory_rate",
                    "temperature_c",
                    "oxygen_saturation",
                    "height_cm",
                    "weight_kg",
                    "severity_classification",
                ],
            ),
            t(
                "test_results",
                "Report a basic lab panel for a {age}-year-old patient presenting with {chief_complaint}, with a one-sentence interpretation.",
                &[
                    "potassium_mmol_l",
                    "sodium_mmol_l",
                    "glucose_mg_dl",
                    "creatinine_mg_dl",
                    "hemoglobin_g_dl",
                    "wbc_k_ul",
                    "interpretation",
                ],
            ),
            t(
                "diagnoses",
                "A {age}-year-old patient presents with {chief_complaint}. Give the most likely diagnosis with its ICD-10 code and status.",
                &["icd10_code", "description", "status"],
            ),
            t(
                "admissions",
                "The patient is admitted with a diagnosis of {diagnosis}. State the admission reason in one sentence.",
                &["admission_reason"],
            ),
            t(
                "treatment_plans",
                "Write a one-sentence treatment plan for a {age}-year-old patient diagnosed with {diagnosis}.",
                &["plan_description"],
            ),
            t(
                "medications",
                "Prescribe medication {medication_number} for {diagnosis} under the plan: {plan}. The patient's allergies: {allergies}. Give drug name, dose, route and frequency.",
                &["drug_name", "dose", "route", "frequency"],
            ),
            t(
                "clinical_notes",
                "Write a short clinical note for a {age}-year-old {gender} patient who presented with {chief_complaint}, was diagnosed with {diagnosis} and has the plan: {plan}.",
                &["note_text"],
            ),
            t(
                "visit_logs",
                "Write a one-line visit log entry for the {event} step of a visit for {chief_complaint}.",
                &["details"],
            ),
            t(
                "discharge_summaries",
                "Write a discharge summary for a patient admitted because {admission_reason}, diagnosed with {diagnosis} and treated with the plan: {plan}. Give the discharge diagnosis, a summary and the disposition.",
                &["discharge_diagnosis", "summary_text", "disposition"],
            ),
            t(
                "referrals",
                "Write a referral for a patient diagnosed with {diagnosis} to the {department} department, with reason and urgency.",
                &["reason", "urgency"],
            ),
            t(
                "billing",
                "Create a bill for a {visit_type} hospital visit with the amount, insurer and payment status.",
                &["amount", "insurance_provider", "status"],
            ),
        ];
        TemplateSet {
            templates: list.into_iter().map(|t| (t.table.clone(), t)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::build_default_schema;

    fn ctx(pairs: &[(&str, &str)]) -> PromptContext {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn no_placeholders_renders_verbatim() {
        let t = PromptTemplate::new("x", "Plain text with no fields.", &[]);
        assert_eq!(render_prompt(&t, &PromptContext::new()).unwrap(), "Plain text with no fields.");
    }

    #[test]
    fn missing_placeholder_is_named() {
        let t = PromptTemplate::new("diagnoses", "Treat {diagnosis} now.", &[]);
        match render_prompt(&t, &PromptContext::new()) {
            Err(GenerationError::MissingPlaceholder(name)) => assert_eq!(name, "diagnosis"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn patient_prompt_names_demographics() {
        let set = TemplateSet::builtin();
        let t = set.get("patient_details").unwrap();
        let c = ctx(&[
            ("age", "34"),
            ("gender", "female"),
            ("ethnicity", "hispanic_or_latino"),
            ("city", "Columbia"),
            ("state", "Missouri"),
        ]);
        let p = render_prompt(t, &c).unwrap();
        assert!(p.starts_with("Create a realistic patient who is a 34-year-old female of hispanic_or_latino"));
        assert!(p.contains("```record\nfirst_name: <value>\nlast_name: <value>\nblood_group: <value>\nphone: <value>\n```"));
        assert_eq!(p, render_prompt(t, &c).unwrap());
    }

    #[test]
    fn braces_that_are_not_placeholders_pass_through() {
        let t = PromptTemplate::new("x", "json {\"a\": 1} and {name}", &[]);
        let p = render_prompt(&t, &ctx(&[("name", "z")])).unwrap();
        assert_eq!(p, "json {\"a\": 1} and z");
        assert_eq!(t.placeholders(), ["name"]);
    }

    #[test]
    fn builtin_covers_all_22_tables() {
        let schema = build_default_schema();
        let set = TemplateSet::builtin();
        set.validate(&schema).unwrap();
        assert_eq!(set.templates.len(), 22);
    }
}
