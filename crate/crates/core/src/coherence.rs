//! Sentence-transition coherence.
//!
//! Textual fields of a visit are paired along a fixed schedule and each pair
//! is scored with P(second follows first). The built-in scorer is a lexical
//! overlap measure; a remote next-sentence model can be swapped in through
//! [`CoherenceScorer`].

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::record::VisitRecord;
use crate::scorers::ScorerError;
use crate::text::tokenize;

pub const DEFAULT_LEXICAL_THRESHOLD: f64 = 0.05;
pub const DEFAULT_REMOTE_THRESHOLD: f64 = 0.99;

/// Textual fields in schedule order, with where each comes from.
pub const FIELDS: [(&str, &str); 7] = [
    ("vitals_summary", "vital_signs (rendered)"),
    ("chronic_conditions", "medical_histories.chronic_conditions"),
    ("past_surgeries", "medical_histories.past_surgeries"),
    ("family_history", "medical_histories.family_history"),
    ("diagnosis", "diagnoses.description"),
    ("treatment", "treatment_plans.plan_description"),
    ("admission_note", "admissions.admission_reason"),
];

/// Adjacent-pair schedule over [`FIELDS`].
pub const PAIR_SCHEDULE: [(&str, &str); 5] = [
    ("vitals_summary", "chronic_conditions"),
    ("chronic_conditions", "past_surgeries"),
    ("family_history", "diagnosis"),
    ("diagnosis", "treatment"),
    ("treatment", "admission_note"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub first: String,
    pub second: String,
    pub source_fields: (String, String),
}

/// Scores sentence pairs with P(IsNext), one probability per pair.
pub trait CoherenceScorer: Send + Sync {
    fn score_pairs(&self, pairs: &[SentencePair]) -> Result<Vec<f64>, ScorerError>;
}

/// Token-set overlap |A∩B| / sqrt(|A|·|B|).
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl CoherenceScorer for LexicalScorer {
    fn score_pairs(&self, pairs: &[SentencePair]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs.iter().map(lexical_coherence_score).collect())
    }
}

fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

pub fn lexical_score(first: &str, second: &str) -> f64 {
    let a = token_set(first);
    let b = token_set(second);
    if a.is_empty() || b.is_empty() {
        return 0.5;
    }
    let common = a.intersection(&b).count() as f64;
    common / ((a.len() * b.len()) as f64).sqrt()
}

pub fn lexical_coherence_score(pair: &SentencePair) -> f64 {
    lexical_score(&pair.first, &pair.second)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// One sentence summarizing the visit's vital signs, or `None` without vitals.
pub fn vitals_summary(record: &VisitRecord) -> Option<String> {
    let num = |c: &str| record.value("vital_signs", c).and_then(|v| v.as_f64());
    let mut parts = Vec::new();
    if let (Some(s), Some(d)) = (num("systolic_bp"), num("diastolic_bp")) {
        parts.push(format!("blood pressure {}/{} mmHg", fmt_num(s), fmt_num(d)));
    }
    for (col, label, unit) in [
        ("heart_rate", "heart rate", " bpm"),
        ("respiratory_rate", "respiratory rate", " breaths per minute"),
        ("temperature_c", "temperature", " C"),
        ("oxygen_saturation", "oxygen saturation", "%"),
        ("height_cm", "height", " cm"),
        ("weight_kg", "weight", " kg"),
    ] {
        if let Some(v) = num(col) {
            parts.push(format!("{label} {}{unit}", fmt_num(v)));
        }
    }
    if parts.is_empty() {
        None
    } else {
        Some(format!("The patient has {}.", parts.join(", ")))
    }
}

/// The schedule's textual fields for one visit, in [`FIELDS`] order.
pub fn record_fields(record: &VisitRecord) -> Vec<(&'static str, Option<String>)> {
    let text = |t: &str, c: &str| record.text(t, c).map(str::to_string);
    vec![
        (FIELDS[0].0, vitals_summary(record)),
        (FIELDS[1].0, text("medical_histories", "chronic_conditions")),
        (FIELDS[2].0, text("medical_histories", "past_surgeries")),
        (FIELDS[3].0, text("medical_histories", "family_history")),
        (FIELDS[4].0, text("diagnoses", "description")),
        (FIELDS[5].0, text("treatment_plans", "plan_description")),
        (FIELDS[6].0, text("admissions", "admission_reason")),
    ]
}

/// Builds the scheduled pairs from named fields. A pair is produced only
/// when both of its fields are present and contain at least one token.
pub fn pairs_from_fields(fields: &[(&str, Option<String>)]) -> Vec<SentencePair> {
    let get = |name: &str| {
        fields
            .iter()
            .find(|(n, _)| *n == name)
            .and_then(|(_, v)| v.as_deref())
            .filter(|v| !tokenize(v).is_empty())
    };
    PAIR_SCHEDULE
        .iter()
        .filter_map(|(a, b)| {
            Some(SentencePair {
                first: get(a)?.to_string(),
                second: get(b)?.to_string(),
                source_fields: (a.to_string(), b.to_string()),
            })
        })
        .collect()
}

pub fn extract_sentence_pairs(record: &VisitRecord) -> Vec<SentencePair> {
    pairs_from_fields(&record_fields(record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub record_id: i64,
    pub probabilities: Vec<f64>,
    pub average_probability: f64,
    pub flagged: bool,
}

/// Averages pair scores and applies the threshold. No pairs means nothing
/// to contradict: average 1.0, not flagged.
pub fn result_from_scores(record_id: i64, probabilities: Vec<f64>, threshold: f64) -> CoherenceResult {
    let average_probability = if probabilities.is_empty() {
        1.0
    } else {
        probabilities.iter().sum::<f64>() / probabilities.len() as f64
    };
    CoherenceResult {
        record_id,
        flagged: average_probability < threshold,
        probabilities,
        average_probability,
    }
}

pub fn assess_record_coherence(
    record: &VisitRecord,
    scorer: &dyn CoherenceScorer,
    threshold: f64,
) -> Result<CoherenceResult, ScorerError> {
    let pairs = extract_sentence_pairs(record);
    let scores = if pairs.is_empty() { Vec::new() } else { scorer.score_pairs(&pairs)? };
    Ok(result_from_scores(record.id(), scores, threshold))
}

/// Scores a batch with a single scorer call, then splits results per record.
pub fn assess_coherence(
    records: &[VisitRecord],
    scorer: &dyn CoherenceScorer,
    threshold: f64,
) -> Result<Vec<CoherenceResult>, ScorerError> {
    let per_record: Vec<Vec<SentencePair>> = records.iter().map(extract_sentence_pairs).collect();
    let flat: Vec<SentencePair> = per_record.iter().flatten().cloned().collect();
    let scores = if flat.is_empty() { Vec::new() } else { scorer.score_pairs(&flat)? };
    if scores.len() != flat.len() {
        return Err(ScorerError::LengthMismatch {
            endpoint: "coherence scorer",
            expected: flat.len(),
            got: scores.len(),
        });
    }
    let mut offset = 0;
    Ok(records
        .iter()
        .zip(&per_record)
        .map(|(r, pairs)| {
            let s = scores[offset..offset + pairs.len()].to_vec();
            offset += pairs.len();
            result_from_scores(r.id(), s, threshold)
        })
        .collect())
}
