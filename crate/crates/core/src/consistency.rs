//! Premise/hypothesis consistency checks.
//!
//! Rules render structured fields of a visit into premise/hypothesis sentence
//! pairs. A classifier labels each pair entailment, neutral or contradiction;
//! any contradiction flags the visit. The built-in classifier decides each
//! pair from its text alone (by matching the rule's templates), so it sees
//! exactly what a remote NLI model would see.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::catalog::{mentions_topic, resolve_condition, DrugClassMap, SeverityBands};
use crate::record::VisitRecord;
use crate::scorers::ScorerError;

pub const DEFAULT_EPSILON: f64 = 0.005;

pub const RULE_ALLERGY_MEDICATION: &str = "allergy_medication";
pub const RULE_VITALS_SEVERITY: &str = "vitals_severity";
pub const RULE_DIAGNOSIS_PLAN: &str = "diagnosis_plan";
pub const RULE_DISCHARGE_ADMISSION: &str = "discharge_admission";

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("no rule with id {0:?}")]
    UnknownRule(String),
    #[error("invalid rule configuration: {0}")]
    InvalidRule(String),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseHypothesis {
    pub premise: String,
    pub hypothesis: String,
    pub rule_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Neutral => "neutral",
            NliLabel::Contradiction => "contradiction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliLabelDistribution {
    pub entailment: f64,
    pub neutral: f64,
    pub contradiction: f64,
}

impl NliLabelDistribution {
    /// The decided label gets 1 − 2ε, the other two ε each.
    pub fn softened(label: NliLabel, epsilon: f64) -> Self {
        let hi = 1.0 - 2.0 * epsilon;
        let pick = |l: NliLabel| if l == label { hi } else { epsilon };
        Self {
            entailment: pick(NliLabel::Entailment),
            neutral: pick(NliLabel::Neutral),
            contradiction: pick(NliLabel::Contradiction),
        }
    }

    /// Components in [0, 1] and summing to 1 within `tolerance`.
    pub fn is_valid(&self, tolerance: f64) -> bool {
        let parts = [self.entailment, self.neutral, self.contradiction];
        parts.iter().all(|p| (0.0..=1.0).contains(p)) && (parts.iter().sum::<f64>() - 1.0).abs() <= tolerance
    }

    /// Most probable label. Ties resolve toward contradiction, then neutral,
    /// so an undecided classifier never hides a contradiction.
    pub fn argmax(&self) -> NliLabel {
        if self.contradiction >= self.neutral && self.contradiction >= self.entailment {
            NliLabel::Contradiction
        } else if self.neutral >= self.entailment {
            NliLabel::Neutral
        } else {
            NliLabel::Entailment
        }
    }
}

/// Labels premise/hypothesis pairs, one distribution per pair.
pub trait NliClassifier: Send + Sync {
    fn classify(&self, pairs: &[PremiseHypothesis]) -> Result<Vec<NliLabelDistribution>, ConsistencyError>;
}

/// What a rule compares and how it decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleKind {
    /// Drug allergy vs each prescribed medication, by drug class.
    AllergyMedication,
    /// Blood pressure vs the recorded severity classification.
    VitalsSeverity,
    /// Diagnosis vs whether its treatment plan mentions the condition's topics.
    DiagnosisPlan,
    /// Admission (visit) diagnosis vs discharge diagnosis.
    DischargeAdmission,
    /// Two `table.column` fields that must agree (case-insensitive).
    FieldMatch { premise_field: String, hypothesis_field: String },
}

/// A rule: identifier, decision kind, and the sentence templates. Templates
/// use `{name}` slots; see [`render_template`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRule {
    pub rule_id: String,
    #[serde(flatten)]
    pub kind: RuleKind,
    pub premise_template: String,
    pub hypothesis_template: String,
}

impl ConsistencyRule {
    fn builtin(rule_id: &str, kind: RuleKind, premise: &str, hypothesis: &str) -> Self {
        Self {
            rule_id: rule_id.to_string(),
            kind,
            premise_template: premise.to_string(),
            hypothesis_template: hypothesis.to_string(),
        }
    }

    pub fn allergy_medication() -> Self {
        Self::builtin(
            RULE_ALLERGY_MEDICATION,
            RuleKind::AllergyMedication,
            "The patient is allergic to {allergen}.",
            "The patient is prescribed {drug}.",
        )
    }

    pub fn vitals_severity() -> Self {
        Self::builtin(
            RULE_VITALS_SEVERITY,
            RuleKind::VitalsSeverity,
            "The patient has a blood pressure of {systolic}/{diastolic} mmHg.",
            "The blood pressure is classified as {severity}.",
        )
    }

    pub fn diagnosis_plan() -> Self {
        Self::builtin(
            RULE_DIAGNOSIS_PLAN,
            RuleKind::DiagnosisPlan,
            "The patient is diagnosed with {diagnosis}.",
            "The treatment plan is to {plan}.",
        )
    }

    pub fn discharge_admission() -> Self {
        Self::builtin(
            RULE_DISCHARGE_ADMISSION,
            RuleKind::DischargeAdmission,
            "The patient was admitted with {diagnosis}.",
            "The patient was discharged with {discharge_diagnosis}.",
        )
    }

    /// The built-in rule set, in evaluation order.
    pub fn builtins() -> Vec<Self> {
        vec![
            Self::allergy_medication(),
            Self::vitals_severity(),
            Self::diagnosis_plan(),
            Self::discharge_admission(),
        ]
    }
}

/// Rules plus the reference data their decisions read.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<ConsistencyRule>,
    pub drug_classes: DrugClassMap,
    pub severity_bands: SeverityBands,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::new(ConsistencyRule::builtins(), DrugClassMap::builtin().clone(), SeverityBands::default())
            .expect("built-in rules are valid")
    }
}

impl RuleSet {
    pub fn new(
        rules: Vec<ConsistencyRule>,
        drug_classes: DrugClassMap,
        severity_bands: SeverityBands,
    ) -> Result<Self, ConsistencyError> {
        if rules.is_empty() {
            return Err(ConsistencyError::InvalidRule("rule set is empty".into()));
        }
        for (i, r) in rules.iter().enumerate() {
            if rules[..i].iter().any(|o| o.rule_id == r.rule_id) {
                return Err(ConsistencyError::InvalidRule(format!("duplicate rule id {:?}", r.rule_id)));
            }
            for t in [&r.premise_template, &r.hypothesis_template] {
                template_segments(t).map_err(|e| ConsistencyError::InvalidRule(format!("{}: {e}", r.rule_id)))?;
            }
            if let RuleKind::FieldMatch {
                premise_field,
                hypothesis_field,
            } = &r.kind
            {
                for f in [premise_field, hypothesis_field] {
                    if f.split_once('.').is_none() {
                        return Err(ConsistencyError::InvalidRule(format!(
                            "{}: field {f:?} is not table.column",
                            r.rule_id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            rules,
            drug_classes,
            severity_bands,
        })
    }

    pub fn rules(&self) -> &[ConsistencyRule] {
        &self.rules
    }

    pub fn rule(&self, rule_id: &str) -> Option<&ConsistencyRule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }
}

enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn template_segments(template: &str) -> Result<Vec<Segment<'_>>, String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Segment::Literal(&rest[..open]));
        }
        let close = rest[open..]
            .find('}')
            .map(|c| open + c)
            .ok_or_else(|| format!("unclosed slot in {template:?}"))?;
        let name = &rest[open + 1..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("bad slot name {name:?} in {template:?}"));
        }
        if matches!(out.last(), Some(Segment::Slot(_))) {
            return Err(format!("adjacent slots in {template:?}"));
        }
        out.push(Segment::Slot(name));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    Ok(out)
}

/// Fills `{name}` slots. Unknown slots render empty.
pub fn render_template(template: &str, values: &[(&str, &str)]) -> String {
    let Ok(segments) = template_segments(template) else {
        return template.to_string();
    };
    segments
        .iter()
        .map(|s| match s {
            Segment::Literal(l) => *l,
            Segment::Slot(n) => values.iter().find(|(k, _)| k == n).map(|(_, v)| *v).unwrap_or(""),
        })
        .collect()
}

/// Inverse of [`render_template`]: recovers slot values from rendered text.
/// Each slot extends to the first occurrence of the literal that follows it.
pub fn match_template(template: &str, text: &str) -> Option<BTreeMap<String, String>> {
    let segments = template_segments(template).ok()?;
    let mut values = BTreeMap::new();
    let mut rest = text;
    let mut i = 0;
    while i < segments.len() {
        match segments[i] {
            Segment::Literal(l) => rest = rest.strip_prefix(l)?,
            Segment::Slot(name) => {
                let value = match segments.get(i + 1) {
                    Some(Segment::Literal(next)) => {
                        // the final literal anchors at the end of the text
                        let at = if i + 2 == segments.len() {
                            rest.strip_suffix(next).map(str::len)?
                        } else {
                            rest.find(next)?
                        };
                        let v = &rest[..at];
                        rest = &rest[at..];
                        v
                    }
                    _ => std::mem::take(&mut rest),
                };
                values.insert(name.to_string(), value.to_string());
            }
        }
        i += 1;
    }
    rest.is_empty().then_some(values)
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase().replace(['_', '-'], " ").split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Builds the pairs every applicable rule produces for one visit.
pub fn build_premise_hypothesis_pairs(record: &VisitRecord, rules: &RuleSet) -> Vec<PremiseHypothesis> {
    let mut out = Vec::new();
    for rule in rules.rules() {
        let mut emit = |slots_p: &[(&str, &str)], slots_h: &[(&str, &str)]| {
            out.push(PremiseHypothesis {
                premise: render_template(&rule.premise_template, slots_p),
                hypothesis: render_template(&rule.hypothesis_template, slots_h),
                rule_id: rule.rule_id.clone(),
            });
        };
        match &rule.kind {
            RuleKind::AllergyMedication => {
                let allergens: Vec<&str> = record
                    .texts("allergies", "allergen")
                    .into_iter()
                    .filter(|a| rules.drug_classes.class_of_allergen(a).is_some())
                    .collect();
                let drugs = record.texts("medications", "drug_name");
                for a in &allergens {
                    for d in &drugs {
                        emit(&[("allergen", a)], &[("drug", d)]);
                    }
                }
            }
            RuleKind::VitalsSeverity => {
                for row in record.table("vital_signs") {
                    let num = |c: &str| row.get(c).and_then(|v| v.as_f64());
                    let severity = row.text("severity_classification").map(str::trim).filter(|s| !s.is_empty());
                    if let (Some(s), Some(d), Some(sev)) = (num("systolic_bp"), num("diastolic_bp"), severity) {
                        let sev = norm(sev);
                        emit(
                            &[("systolic", &fmt_num(s)), ("diastolic", &fmt_num(d))],
                            &[("severity", &sev)],
                        );
                    }
                }
            }
            RuleKind::DiagnosisPlan => {
                for plan in record.table("treatment_plans") {
                    let dx = plan.int("diagnosis_id").and_then(|id| {
                        record
                            .table("diagnoses")
                            .iter()
                            .find(|d| d.int("diagnosis_id") == Some(id))
                    });
                    let dx_text = dx.and_then(|d| d.text("description")).map(str::trim).filter(|s| !s.is_empty());
                    let plan_text = plan
                        .text("plan_description")
                        .map(|s| s.trim().trim_end_matches('.'))
                        .filter(|s| !s.is_empty());
                    if let (Some(dx), Some(p)) = (dx_text, plan_text) {
                        emit(&[("diagnosis", dx)], &[("plan", p)]);
                    }
                }
            }
            RuleKind::DischargeAdmission => {
                let admitted = record.text("diagnoses", "description");
                for summary in record.table("discharge_summaries") {
                    let discharged = summary.text("discharge_diagnosis").map(str::trim).filter(|s| !s.is_empty());
                    if let (Some(a), Some(d)) = (admitted, discharged) {
                        emit(&[("diagnosis", a)], &[("discharge_diagnosis", d)]);
                    }
                }
            }
            RuleKind::FieldMatch {
                premise_field,
                hypothesis_field,
            } => {
                let get = |f: &str| {
                    let (t, c) = f.split_once('.')?;
                    record.text(t, c).map(str::to_string).or_else(|| {
                        record.value(t, c).map(|v| v.to_json().to_string().trim_matches('"').to_string())
                    })
                };
                if let (Some(p), Some(h)) = (get(premise_field), get(hypothesis_field)) {
                    emit(&[("value", &p)], &[("value", &h)]);
                }
            }
        }
    }
    out
}

/// Deterministic classifier over the built-in and configured rules.
#[derive(Debug, Clone)]
pub struct RuleBasedNli {
    pub rules: RuleSet,
    pub epsilon: f64,
}

impl Default for RuleBasedNli {
    fn default() -> Self {
        Self {
            rules: RuleSet::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl RuleBasedNli {
    pub fn new(rules: RuleSet, epsilon: f64) -> Result<Self, ConsistencyError> {
        if !(0.0..1.0 / 3.0).contains(&epsilon) {
            return Err(ConsistencyError::InvalidRule(format!("epsilon {epsilon} outside [0, 1/3)")));
        }
        Ok(Self { rules, epsilon })
    }

    /// The label a rule assigns to a pair.
    pub fn decide(&self, pair: &PremiseHypothesis) -> Result<NliLabel, ConsistencyError> {
        let rule = self
            .rules
            .rule(&pair.rule_id)
            .ok_or_else(|| ConsistencyError::UnknownRule(pair.rule_id.clone()))?;
        let (Some(p), Some(h)) = (
            match_template(&rule.premise_template, &pair.premise),
            match_template(&rule.hypothesis_template, &pair.hypothesis),
        ) else {
            return Ok(NliLabel::Neutral);
        };
        let slot = |m: &BTreeMap<String, String>, k: &str| m.get(k).map(String::as_str).unwrap_or("").to_string();
        let agree = |same: bool| if same { NliLabel::Entailment } else { NliLabel::Contradiction };
        Ok(match &rule.kind {
            RuleKind::AllergyMedication => {
                let classes = &self.rules.drug_classes;
                match (
                    classes.class_of_allergen(&slot(&p, "allergen")),
                    classes.class_of_drug(&slot(&h, "drug")),
                ) {
                    (Some(a), Some(d)) => agree(a != d),
                    _ => NliLabel::Neutral,
                }
            }
            RuleKind::VitalsSeverity => {
                let num = |k: &str| slot(&p, k).trim().parse::<f64>().ok();
                match (num("systolic"), num("diastolic")) {
                    (Some(s), Some(d)) => agree(norm(self.rules.severity_bands.classify(s, d)) == norm(&slot(&h, "severity"))),
                    _ => NliLabel::Neutral,
                }
            }
            RuleKind::DiagnosisPlan => match resolve_condition(&slot(&p, "diagnosis")) {
                Some(c) => agree(mentions_topic(c, &slot(&h, "plan"))),
                None => NliLabel::Neutral,
            },
            RuleKind::DischargeAdmission => {
                let (a, d) = (slot(&p, "diagnosis"), slot(&h, "discharge_diagnosis"));
                match (resolve_condition(&a), resolve_condition(&d)) {
                    (Some(x), Some(y)) => agree(x.name == y.name),
                    _ if norm(&a) == norm(&d) => NliLabel::Entailment,
                    _ => NliLabel::Neutral,
                }
            }
            RuleKind::FieldMatch { .. } => agree(norm(&slot(&p, "value")) == norm(&slot(&h, "value"))),
        })
    }

    pub fn classify_one(&self, pair: &PremiseHypothesis) -> Result<NliLabelDistribution, ConsistencyError> {
        Ok(NliLabelDistribution::softened(self.decide(pair)?, self.epsilon))
    }
}

impl NliClassifier for RuleBasedNli {
    fn classify(&self, pairs: &[PremiseHypothesis]) -> Result<Vec<NliLabelDistribution>, ConsistencyError> {
        use rayon::prelude::*;
        pairs.par_iter().map(|p| self.classify_one(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub rule_id: String,
    pub label: NliLabel,
    pub distribution: NliLabelDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub record_id: i64,
    pub pairs: Vec<PairOutcome>,
    /// Mean entailment probability; 1.0 without pairs.
    pub consistency_score: f64,
    /// Largest contradiction probability; 0.0 without pairs.
    pub max_contradiction: f64,
    pub flagged: bool,
}

pub fn result_from_distributions(
    record_id: i64,
    pairs: &[PremiseHypothesis],
    distributions: &[NliLabelDistribution],
) -> ConsistencyResult {
    let outcomes: Vec<PairOutcome> = pairs
        .iter()
        .zip(distributions)
        .map(|(p, d)| PairOutcome {
            rule_id: p.rule_id.clone(),
            label: d.argmax(),
            distribution: *d,
        })
        .collect();
    let consistency_score = if distributions.is_empty() {
        1.0
    } else {
        distributions.iter().map(|d| d.entailment).sum::<f64>() / distributions.len() as f64
    };
    ConsistencyResult {
        record_id,
        flagged: outcomes.iter().any(|o| o.label == NliLabel::Contradiction),
        max_contradiction: distributions.iter().map(|d| d.contradiction).fold(0.0, f64::max),
        consistency_score,
        pairs: outcomes,
    }
}

pub fn assess_record_consistency(
    record: &VisitRecord,
    classifier: &dyn NliClassifier,
    rules: &RuleSet,
) -> Result<ConsistencyResult, ConsistencyError> {
    let pairs = build_premise_hypothesis_pairs(record, rules);
    let dists = if pairs.is_empty() { Vec::new() } else { classifier.classify(&pairs)? };
    Ok(result_from_distributions(record.id(), &pairs, &dists))
}

/// Classifies a batch with a single classifier call, then splits per record.
pub fn assess_consistency(
    records: &[VisitRecord],
    classifier: &dyn NliClassifier,
    rules: &RuleSet,
) -> Result<Vec<ConsistencyResult>, ConsistencyError> {
    let per_record: Vec<Vec<PremiseHypothesis>> =
        records.iter().map(|r| build_premise_hypothesis_pairs(r, rules)).collect();
    let flat: Vec<PremiseHypothesis> = per_record.iter().flatten().cloned().collect();
    let dists = if flat.is_empty() { Vec::new() } else { classifier.classify(&flat)? };
    if dists.len() != flat.len() {
        return Err(ScorerError::LengthMismatch {
            endpoint: "nli classifier",
            expected: flat.len(),
            got: dists.len(),
        }
        .into());
    }
    let mut offset = 0;
    Ok(records
        .iter()
        .zip(&per_record)
        .map(|(r, pairs)| {
            let d = &dists[offset..offset + pairs.len()];
            offset += pairs.len();
            result_from_distributions(r.id(), pairs, d)
        })
        .collect())
}
