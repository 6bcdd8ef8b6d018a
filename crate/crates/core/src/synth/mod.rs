//! Synthetic record generation: prompt templates, pluggable completion
//! backends, structured-output parsing and patient-bundle assembly.
//!
//! Every row is produced by rendering its table's template against the
//! bundle built so far, asking a [`GenerationBackend`] for a completion and
//! parsing the fenced `field: value` block out of it. Keys, foreign keys,
//! dates and denormalized demographics are filled in by the assembler, never
//! by the backend, so referential closure holds by construction.

mod backend;
mod bundle;
pub mod cohort_file;
pub mod demographics;
mod grammar;
mod parse;
mod template;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{ApiStyle, BackendError, GenerationBackend, GrammarBackend, RemoteLlmBackend, RemoteLlmConfig};
pub use bundle::{
    generate_bundle, generate_cohort, generate_reference, Cohort, Generator, PatientBundle, ReferenceData,
    RowProvenance, TableRows,
};
pub use demographics::{AgeBand, Categorical, Demographics, DiversityParams};
pub use parse::{parse_structured_output, ParseError};
pub use template::{render_prompt, PromptContext, PromptTemplate, TemplateSet, BLOCK_TAG};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("missing placeholder '{0}'")]
    MissingPlaceholder(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("generation failed for table '{table}'{} after {attempts} attempt(s): {last_error}",
        patient_index.map(|i| format!(" (patient index {i})")).unwrap_or_default())]
    GenerationFailed {
        table: String,
        patient_index: Option<usize>,
        attempts: u32,
        last_error: String,
    },
    #[error("assembled row does not fit table '{table}': {detail}")]
    Schema { table: String, detail: String },
    #[error("invalid generation config: {0}")]
    Config(String),
}

/// Inclusive count range, drawn uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

impl CountRange {
    pub const fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }
}

/// Row multiplicities. Reference tables are sized once per cohort; the rest
/// are drawn per patient or per visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountConfig {
    pub staff_per_department: u32,
    pub wards_per_department: u32,
    pub beds_per_ward: u32,
    pub emergency_contacts: CountRange,
    pub immunizations: CountRange,
    pub allergies: CountRange,
    pub visits: CountRange,
    pub medications_per_plan: CountRange,
    /// Probability that a visit after the first is an inpatient stay; the
    /// first visit of every patient is always inpatient so admission tables
    /// are populated for each patient.
    pub inpatient_probability: f64,
    pub emergency_probability: f64,
    /// Probability of a referral on visits after the first (which always has one).
    pub referral_probability: f64,
}

impl Default for CountConfig {
    fn default() -> Self {
        Self {
            staff_per_department: 5,
            wards_per_department: 1,
            beds_per_ward: 4,
            emergency_contacts: CountRange::new(1, 2),
            immunizations: CountRange::new(1, 3),
            allergies: CountRange::new(1, 2),
            visits: CountRange::new(3, 5),
            medications_per_plan: CountRange::new(1, 2),
            inpatient_probability: 0.15,
            emergency_probability: 0.25,
            referral_probability: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Re-prompts after a parse or backend failure, each with seed + attempt.
    pub retry_limit: u32,
    pub max_len: usize,
    /// Dates are laid out relative to this day so output never depends on
    /// the wall clock.
    pub reference_date: NaiveDate,
    pub counts: CountConfig,
    pub diversity: DiversityParams,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            retry_limit: 3,
            max_len: 1024,
            reference_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            counts: CountConfig::default(),
            diversity: DiversityParams::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenerationError> {
        self.diversity.validate().map_err(GenerationError::Config)?;
        let c = &self.counts;
        for (name, r) in [
            ("emergency_contacts", c.emergency_contacts),
            ("immunizations", c.immunizations),
            ("allergies", c.allergies),
            ("visits", c.visits),
            ("medications_per_plan", c.medications_per_plan),
        ] {
            if r.min > r.max || r.min == 0 {
                return Err(GenerationError::Config(format!(
                    "counts.{name} must satisfy 1 <= min <= max"
                )));
            }
        }
        if c.staff_per_department == 0 || c.wards_per_department == 0 || c.beds_per_ward == 0 {
            return Err(GenerationError::Config("reference table counts must be positive".into()));
        }
        for (name, p) in [
            ("inpatient_probability", c.inpatient_probability),
            ("emergency_probability", c.emergency_probability),
            ("referral_probability", c.referral_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GenerationError::Config(format!("counts.{name} must lie in [0, 1]")));
            }
        }
        if c.inpatient_probability + c.emergency_probability > 1.0 {
            return Err(GenerationError::Config(
                "inpatient and emergency probabilities must sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}
